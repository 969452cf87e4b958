#pragma once

// Classification metrics: cross-entropy, confusion matrix with one-vs-rest
// rates, mean-of-epochs AP, and one-vs-rest ROC curves with trapezoidal AUC.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lostnet/tensor.hpp"

namespace lostnet {

inline constexpr double kProbabilityFloor = 1e-12;

/// Mean negative log-probability of the true class. probs is (N, K, 1, 1).
template <typename T>
double cross_entropy(const Tensor<T>& probs, std::span<const std::size_t> labels) {
  const std::size_t n = probs.shape().n(), k = probs.shape().c() * probs.shape().plane();
  if (labels.size() != n) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(n) + " rows");
  }
  if (n == 0) throw std::invalid_argument("cross_entropy: empty batch");
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[i]) + " out of range for " +
                                  std::to_string(k) + " classes");
    }
    double row = 0;
    for (std::size_t c = 0; c < k; ++c) row += static_cast<double>(probs[i * k + c]);
    if (std::abs(row - 1.0) > 1e-4) {
      throw std::invalid_argument("cross_entropy: row " + std::to_string(i) + " sums to " + std::to_string(row));
    }
    loss -= std::log(std::max(static_cast<double>(probs[i * k + labels[i]]), kProbabilityFloor));
  }
  return loss / static_cast<double>(n);
}

/// counts(predicted, actual); rows are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {
    if (classes == 0) throw std::invalid_argument("ConfusionMatrix: need at least one class");
  }

  void add(std::size_t predicted, std::size_t actual) {
    if (predicted >= k_ || actual >= k_) throw std::out_of_range("ConfusionMatrix: class index out of range");
    ++counts_[predicted * k_ + actual];
  }

  std::size_t classes() const { return k_; }
  std::uint64_t at(std::size_t predicted, std::size_t actual) const { return counts_[predicted * k_ + actual]; }
  std::uint64_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }
  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < k_; ++i) t += at(i, i);
    return t;
  }
  std::uint64_t predicted_count(std::size_t c) const {
    std::uint64_t s = 0;
    for (std::size_t a = 0; a < k_; ++a) s += at(c, a);
    return s;
  }
  std::uint64_t actual_count(std::size_t c) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < k_; ++p) s += at(p, c);
    return s;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

/// One-vs-rest counts and rates for a single class. Rates with a zero
/// denominator are empty rather than 0.
struct ClassMetrics {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  double accuracy = 0;
  std::optional<double> recall;
  std::optional<double> precision;
};

inline ClassMetrics class_metrics(const ConfusionMatrix& cm, std::size_t c) {
  ClassMetrics m;
  m.tp = cm.at(c, c);
  m.fp = cm.predicted_count(c) - m.tp;
  m.fn = cm.actual_count(c) - m.tp;
  m.tn = cm.total() - m.tp - m.fp - m.fn;
  const std::uint64_t all = m.tp + m.fp + m.fn + m.tn;
  m.accuracy = all ? static_cast<double>(m.tp + m.tn) / static_cast<double>(all) : 0.0;
  if (m.tp + m.fn) m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  if (m.tp + m.fp) m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  return m;
}

/// Mean of per-epoch accuracies.
inline double average_accuracy(std::span<const double> epoch_accuracies) {
  if (epoch_accuracies.empty()) throw std::invalid_argument("average_accuracy: no epochs");
  return std::accumulate(epoch_accuracies.begin(), epoch_accuracies.end(), 0.0) /
         static_cast<double>(epoch_accuracies.size());
}

struct RocPoint {
  double fpr = 0, tpr = 0;
  double threshold = 0;  // scores >= threshold count as positive
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) to (1,1)
  std::optional<double> auc;     // empty when the class has no positives or no negatives
};

/// ROC of `scores` against binary `positive`. Tied scores move the curve
/// diagonally, which equals averaging ranks.
inline RocCurve binary_roc(std::span<const double> scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw std::invalid_argument("binary_roc: length mismatch");
  for (double s : scores) {
    if (!std::isfinite(s)) throw std::invalid_argument("binary_roc: non-finite score");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const auto pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  const std::size_t neg = positive.size() - pos;
  RocCurve curve;
  curve.points.push_back({0.0, 0.0, INFINITY});
  std::size_t tp = 0, fp = 0;
  double area = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    const std::size_t tp0 = tp, fp0 = fp;
    for (; i < order.size() && scores[order[i]] == s; ++i) (positive[order[i]] ? tp : fp)++;
    if (pos && neg) {
      area += (static_cast<double>(fp - fp0) / static_cast<double>(neg)) *
              (static_cast<double>(tp + tp0) / (2.0 * static_cast<double>(pos)));
    }
    curve.points.push_back({neg ? static_cast<double>(fp) / static_cast<double>(neg) : 0.0,
                            pos ? static_cast<double>(tp) / static_cast<double>(pos) : 0.0, s});
  }
  if (pos && neg) curve.auc = area;
  return curve;
}

/// One-vs-rest ROC per class. scores is (N, K, 1, 1).
template <typename T>
std::vector<RocCurve> roc_auc(const Tensor<T>& scores, std::span<const std::size_t> labels) {
  const std::size_t n = scores.shape().n(), k = scores.shape().c() * scores.shape().plane();
  if (labels.size() != n) throw std::invalid_argument("roc_auc: label count does not match scores");
  std::vector<RocCurve> out;
  std::vector<double> col(n);
  std::vector<bool> pos(n);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = static_cast<double>(scores[i * k + c]);
      pos[i] = labels[i] == c;
    }
    out.push_back(binary_roc(col, pos));
  }
  return out;
}

struct MetricsReport {
  double accuracy = 0;  // trace / total
  std::vector<ClassMetrics> per_class;
  std::optional<double> macro_recall, macro_precision;  // over classes where defined
  std::optional<double> ap;                             // mean of epoch_accuracies
  std::vector<double> epoch_accuracies;
  std::optional<double> loss;
  std::vector<RocCurve> roc;
};

inline MetricsReport summarize(const ConfusionMatrix& cm, std::vector<double> epoch_accuracies = {}) {
  MetricsReport r;
  const auto total = cm.total();
  r.accuracy = total ? static_cast<double>(cm.trace()) / static_cast<double>(total) : 0.0;
  double rs = 0, ps = 0;
  std::size_t rn = 0, pn = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    r.per_class.push_back(class_metrics(cm, c));
    const auto& m = r.per_class.back();
    if (m.recall) rs += *m.recall, ++rn;
    if (m.precision) ps += *m.precision, ++pn;
  }
  if (rn) r.macro_recall = rs / static_cast<double>(rn);
  if (pn) r.macro_precision = ps / static_cast<double>(pn);
  if (!epoch_accuracies.empty()) r.ap = average_accuracy(epoch_accuracies);
  r.epoch_accuracies = std::move(epoch_accuracies);
  return r;
}

}  // namespace lostnet

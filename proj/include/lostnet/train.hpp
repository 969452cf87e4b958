#pragma once

// Two-phase fine-tuning: the backbone (and by default the CBAM, which feeds
// it) is frozen for the first phase with batchnorm on running statistics,
// then everything trains. Cosine learning-rate decay restarts for each phase and
// optimizer slots are reset between phases.

#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "lostnet/dataset.hpp"
#include "lostnet/metrics.hpp"
#include "lostnet/model.hpp"
#include "lostnet/optim.hpp"

namespace lostnet {

struct TrainConfig {
  std::size_t freeze_epochs = 50, freeze_batch = 32;
  std::size_t unfreeze_epochs = 400, unfreeze_batch = 64;
  double init_lr = 1e-2;
  /// Cosine floor as a fraction of init_lr.
  double min_lr_ratio = 1e-2;
  OptimizerConfig optimizer{};
  std::uint64_t seed = 0;
  /// Train the CBAM during phase 1 as well. Off by default: CBAM updates
  /// shift the inputs of every frozen batchnorm layer downstream of it.
  bool phase1_trains_attention = false;

  void validate() const {
    if (freeze_epochs == 0 || unfreeze_epochs == 0) throw std::invalid_argument("train: epoch counts must be positive");
    if (freeze_batch == 0 || unfreeze_batch == 0) throw std::invalid_argument("train: batch sizes must be positive");
    if (!(init_lr >= 0) || !(min_lr_ratio >= 0)) throw std::invalid_argument("train: learning rates must be >= 0");
  }
};

enum class Phase { Freeze, Unfreeze };

inline const char* phase_name(Phase p) { return p == Phase::Freeze ? "freeze" : "unfreeze"; }

struct EpochRecord {
  std::size_t epoch = 0;  // 0-based across both phases
  Phase phase = Phase::Freeze;
  double lr = 0;
  double loss = 0;  // sample-weighted mean training loss over the epoch
  std::optional<double> val_accuracy;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// epoch<TAB>phase<TAB>lr<TAB>loss<TAB>val_accuracy; a missing validation accuracy prints "nan".
inline std::string format_history_line(const EpochRecord& r) {
  char buf[160];
  if (r.val_accuracy) {
    std::snprintf(buf, sizeof buf, "%zu\t%s\t%.9g\t%.9g\t%.6f", r.epoch, phase_name(r.phase), r.lr, r.loss,
                  *r.val_accuracy);
  } else {
    std::snprintf(buf, sizeof buf, "%zu\t%s\t%.9g\t%.9g\tnan", r.epoch, phase_name(r.phase), r.lr, r.loss);
  }
  return buf;
}

inline void write_history(std::ostream& os, const std::vector<EpochRecord>& history) {
  for (const auto& r : history) os << format_history_line(r) << '\n';
}

/// Called after every epoch with the record and the current weights.
using EpochCallback = std::function<void(const EpochRecord&, const WeightStore<float>&)>;

struct TrainResult {
  WeightStore<float> weights;
  std::vector<EpochRecord> history;
};

/// Row-wise argmax (first maximum) of (N, K, 1, 1).
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& x) {
  const std::size_t n = x.shape().n(), k = x.size() / std::max<std::size_t>(n, 1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = x.data() + i * k;
    out[i] = static_cast<std::size_t>(std::max_element(row, row + k) - row);
  }
  return out;
}

/// Inference-mode predictions and softmax probabilities over a dataset.
inline Tensor<float> predict_probabilities(const NetworkSpec& spec, const WeightStore<float>& weights,
                                           const TensorDataset& data, std::size_t batch = 32) {
  if (data.empty()) throw std::invalid_argument("predict: empty dataset");
  Tensor<float> probs(Shape(data.size(), spec.num_classes, 1, 1));
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t start = 0; start < idx.size(); start += batch) {
    const std::size_t n = std::min(batch, idx.size() - start);
    const auto p = softmax(infer_logits(spec, weights, data.batch(std::span(idx).subspan(start, n))));
    std::copy(p.data(), p.data() + p.size(), probs.data() + start * spec.num_classes);
  }
  return probs;
}

inline double accuracy_of(const NetworkSpec& spec, const WeightStore<float>& weights, const TensorDataset& data) {
  const auto pred = argmax_rows(predict_probabilities(spec, weights, data));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == data.labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

namespace detail {

/// Batches of `size` in shuffled order; a trailing batch of one sample is
/// folded into the previous batch since batch statistics need two samples.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += size) out.emplace_back(order.begin() + s, order.begin() + std::min(n, s + size));
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back()[0]);
    out.pop_back();
  }
  return out;
}

}  // namespace detail

/// Replaces every batchnorm running mean/variance with the statistics of
/// the first `max_samples` of `data` in one full-batch training-mode pass.
/// Freshly initialized weights carry placeholder statistics (0, 1); a
/// frozen backbone then sees unnormalized activations.
inline void calibrate_batchnorm(const NetworkSpec& spec, WeightStore<float>& weights, const TensorDataset& data,
                                std::size_t max_samples = 256) {
  if (data.size() < 2) throw std::invalid_argument("calibrate_batchnorm: need at least 2 samples");
  std::vector<std::size_t> idx(std::min(data.size(), max_samples));
  std::iota(idx.begin(), idx.end(), 0);
  Tape<float> tape;
  ForwardOptions fopt;
  fopt.training = true;
  fopt.bn.momentum = 1.0;
  forward(tape, spec, weights, tape.constant(data.batch(idx)), fopt);
}

/// Runs one epoch of updates at learning rate `lr`; returns the mean loss.
inline double train_epoch(const NetworkSpec& spec, WeightStore<float>& weights, const TensorDataset& data,
                          Optimizer<float>& opt, const ForwardOptions& fopt, std::size_t batch_size, double lr,
                          std::mt19937_64& rng) {
  double loss_sum = 0;
  for (const auto& b : detail::make_batches(data.size(), batch_size, rng)) {
    Tape<float> tape;
    auto x = tape.constant(data.batch(b));
    auto out = forward(tape, spec, weights, x, fopt);
    std::vector<std::size_t> labels;
    labels.reserve(b.size());
    for (std::size_t i : b) labels.push_back(data.labels[i]);
    auto loss = tape.softmax_cross_entropy(out.logits, labels);
    const double l = tape.value(loss)[0];
    if (!std::isfinite(l)) throw std::runtime_error("train: loss became non-finite; lower the learning rate");
    loss_sum += l * static_cast<double>(b.size());
    tape.backward(loss);
    for (const auto& [name, var] : out.params) {
      if (!tape.has_grad(var)) continue;
      opt.step(name, weights.at(name).values(), tape.grad(var).values(), lr);
    }
  }
  return loss_sum / static_cast<double>(data.size());
}

inline TrainResult train(const NetworkSpec& spec, WeightStore<float> weights, const TensorDataset& train_set,
                         const TensorDataset* val_set, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  validate_weights(weights, spec);
  std::mt19937_64 rng(cfg.seed);
  Optimizer<float> opt(cfg.optimizer);
  TrainResult result;
  std::size_t epoch = 0;
  for (Phase phase : {Phase::Freeze, Phase::Unfreeze}) {
    ForwardOptions fopt;
    fopt.training = true;
    fopt.freeze(ParamGroup::Backbone, phase == Phase::Freeze);
    fopt.freeze(ParamGroup::Attention, phase == Phase::Freeze && !cfg.phase1_trains_attention);
    const std::size_t epochs = phase == Phase::Freeze ? cfg.freeze_epochs : cfg.unfreeze_epochs;
    const std::size_t batch = phase == Phase::Freeze ? cfg.freeze_batch : cfg.unfreeze_batch;
    opt.reset();
    for (std::size_t e = 0; e < epochs; ++e, ++epoch) {
      EpochRecord rec;
      rec.epoch = epoch;
      rec.phase = phase;
      rec.lr = cosine_lr(e, epochs, cfg.init_lr, cfg.init_lr * cfg.min_lr_ratio);
      rec.loss = train_epoch(spec, weights, train_set, opt, fopt, batch, rec.lr, rng);
      if (val_set && !val_set->empty()) rec.val_accuracy = accuracy_of(spec, weights, *val_set);
      result.history.push_back(rec);
      if (on_epoch) on_epoch(rec, weights);
    }
  }
  result.weights = std::move(weights);
  return result;
}

struct Evaluation {
  ConfusionMatrix confusion{1};
  MetricsReport report;
  std::vector<std::size_t> predictions;
  Tensor<float> probabilities;
};

/// Confusion matrix, rates, loss and one-vs-rest ROC over `data`.
inline Evaluation evaluate(const NetworkSpec& spec, const WeightStore<float>& weights, const TensorDataset& data,
                           std::vector<double> epoch_accuracies = {}, std::size_t batch = 32) {
  Evaluation ev;
  ev.probabilities = predict_probabilities(spec, weights, data, batch);
  ev.predictions = argmax_rows(ev.probabilities);
  ev.confusion = ConfusionMatrix(spec.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) ev.confusion.add(ev.predictions[i], data.labels[i]);
  ev.report = summarize(ev.confusion, std::move(epoch_accuracies));
  ev.report.loss = cross_entropy(ev.probabilities, std::span<const std::size_t>(data.labels));
  ev.report.roc = roc_auc(ev.probabilities, std::span<const std::size_t>(data.labels));
  return ev;
}

}  // namespace lostnet

#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lostnet {

enum class OptimizerKind { Sgd, RmsProp, Adam };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd" || s == "SGD") return OptimizerKind::Sgd;
  if (s == "rmsprop" || s == "RMSprop") return OptimizerKind::RmsProp;
  if (s == "adam" || s == "ADAM" || s == "Adam") return OptimizerKind::Adam;
  throw std::invalid_argument("unknown optimizer '" + s + "' (expected sgd, rmsprop or adam)");
}

inline const char* optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::RmsProp: return "rmsprop";
    case OptimizerKind::Adam: return "adam";
  }
  return "?";
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double momentum = 0.9;
  double rms_decay = 0.99;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter slots: m is the SGD velocity or Adam first moment, v the
/// squared-gradient average.
template <typename T>
struct OptimizerState {
  std::vector<T> m, v;
  std::uint64_t steps = 0;
};

namespace detail {

template <typename T>
void check_lengths(const char* who, std::span<T> p, std::span<const T> g, OptimizerState<T>& s, bool need_v) {
  if (p.size() != g.size()) {
    throw std::invalid_argument(std::string(who) + ": " + std::to_string(p.size()) + " parameters but " +
                                std::to_string(g.size()) + " gradients");
  }
  if (s.m.empty()) s.m.assign(p.size(), T(0));
  if (need_v && s.v.empty()) s.v.assign(p.size(), T(0));
  if (s.m.size() != p.size() || (need_v && s.v.size() != p.size())) {
    throw std::invalid_argument(std::string(who) + ": optimizer state does not match parameter length");
  }
}

}  // namespace detail

/// v = momentum * v + g;  p -= lr * v
template <typename T>
void sgd_step(std::span<T> p, std::span<const T> g, OptimizerState<T>& s, double lr, double momentum = 0.9) {
  detail::check_lengths("sgd_step", p, g, s, false);
  for (std::size_t i = 0; i < p.size(); ++i) {
    s.m[i] = static_cast<T>(momentum * s.m[i] + g[i]);
    p[i] = static_cast<T>(p[i] - lr * s.m[i]);
  }
  ++s.steps;
}

/// v = decay * v + (1 - decay) g^2;  p -= lr * g / (sqrt(v) + eps)
template <typename T>
void rmsprop_step(std::span<T> p, std::span<const T> g, OptimizerState<T>& s, double lr, double decay = 0.99,
                  double eps = 1e-8) {
  detail::check_lengths("rmsprop_step", p, g, s, true);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g[i];
    const double v = decay * s.v[i] + (1 - decay) * gi * gi;
    s.v[i] = static_cast<T>(v);
    p[i] = static_cast<T>(p[i] - lr * gi / (std::sqrt(v) + eps));
  }
  ++s.steps;
}

/// Bias-corrected Adam.
template <typename T>
void adam_step(std::span<T> p, std::span<const T> g, OptimizerState<T>& s, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8) {
  detail::check_lengths("adam_step", p, g, s, true);
  ++s.steps;
  const double c1 = 1 - std::pow(beta1, static_cast<double>(s.steps));
  const double c2 = 1 - std::pow(beta2, static_cast<double>(s.steps));
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g[i];
    const double m = beta1 * s.m[i] + (1 - beta1) * gi;
    const double v = beta2 * s.v[i] + (1 - beta2) * gi * gi;
    s.m[i] = static_cast<T>(m);
    s.v[i] = static_cast<T>(v);
    p[i] = static_cast<T>(p[i] - lr * (m / c1) / (std::sqrt(v / c2) + eps));
  }
}

/// Named-parameter optimizer; state is created on first use of each name.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::string& name, std::span<T> p, std::span<const T> g, double lr) {
    auto& s = state_[name];
    switch (cfg_.kind) {
      case OptimizerKind::Sgd: sgd_step(p, g, s, lr, cfg_.momentum); break;
      case OptimizerKind::RmsProp: rmsprop_step(p, g, s, lr, cfg_.rms_decay, cfg_.eps); break;
      case OptimizerKind::Adam: adam_step(p, g, s, lr, cfg_.beta1, cfg_.beta2, cfg_.eps); break;
    }
  }

  const OptimizerConfig& config() const { return cfg_; }
  /// Drops all slots, e.g. between training phases.
  void reset() { state_.clear(); }

 private:
  OptimizerConfig cfg_;
  std::map<std::string, OptimizerState<T>> state_;
};

/// min + (init - min)(1 + cos(pi * epoch / (total - 1))) / 2; a one-epoch schedule stays at init.
inline double cosine_lr(std::size_t epoch, std::size_t total_epochs, double init_lr, double min_lr) {
  if (epoch >= total_epochs) {
    throw std::out_of_range("cosine_lr: epoch " + std::to_string(epoch) + " outside schedule of " +
                            std::to_string(total_epochs));
  }
  if (total_epochs == 1) return init_lr;
  const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
  return min_lr + 0.5 * (init_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace lostnet

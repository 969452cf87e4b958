#pragma once

// Typed view of a Config: every key the CLI understands, with defaults.

#include <array>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lostnet/config.hpp"
#include "lostnet/dataset.hpp"
#include "lostnet/network.hpp"
#include "lostnet/optim.hpp"
#include "lostnet/train.hpp"

namespace lostnet {

struct Settings {
  std::vector<std::string> classes = default_classes();
  std::size_t input_resolution = 224;
  Normalization norm{};
  CbamOptions cbam{};
  TrainConfig train{};
  std::size_t calibration_samples = 256;
  std::string weights;  // path; empty means none
  std::string registry_dir = "registry";
  std::string host = "127.0.0.1";
  std::optional<int> port;  // unset: LOSTNET_PORT, then the default
  std::size_t top_k = 5;
  std::uint64_t seed = 0;

  NetworkSpec network() const { return build_network(classes.size(), input_resolution, cbam); }
};

inline const std::set<std::string>& settings_keys() {
  static const std::set<std::string> keys{
      "classes",        "input_resolution", "norm_mean",     "norm_std",       "cbam_reduction",
      "cbam_kernel",    "freeze_epochs",    "freeze_batch",  "unfreeze_epochs", "unfreeze_batch",
      "init_lr",        "min_lr_ratio",     "optimizer",     "momentum",       "rms_decay",
      "adam_beta1",     "adam_beta2",       "optimizer_eps", "phase1_trains_attention",
      "calibration_samples", "weights",     "registry_dir",  "host",           "port",
      "top_k",          "seed"};
  return keys;
}

namespace detail {

inline std::array<float, 3> triple(const Config& c, const std::string& key, std::array<float, 3> fallback) {
  if (!c.has(key)) return fallback;
  const auto v = c.get_doubles(key, {});
  if (v.size() != 3) throw ConfigError("'" + key + "' needs exactly 3 comma-separated numbers");
  return {static_cast<float>(v[0]), static_cast<float>(v[1]), static_cast<float>(v[2])};
}

}  // namespace detail

/// Unknown keys are rejected; range checks happen where values are used.
inline Settings settings_from(const Config& c) {
  c.require_known(settings_keys());
  Settings s;
  s.classes = c.get_list("classes", s.classes);
  if (s.classes.empty()) throw ConfigError("'classes' must name at least one class");
  s.input_resolution = c.get_size("input_resolution", s.input_resolution);
  s.norm.mean = detail::triple(c, "norm_mean", s.norm.mean);
  s.norm.stddev = detail::triple(c, "norm_std", s.norm.stddev);
  for (float v : s.norm.stddev) {
    if (!(v > 0)) throw ConfigError("'norm_std' entries must be positive");
  }
  s.cbam.reduction = c.get_size("cbam_reduction", s.cbam.reduction);
  s.cbam.spatial_kernel = c.get_size("cbam_kernel", s.cbam.spatial_kernel);

  auto& t = s.train;
  t.freeze_epochs = c.get_size("freeze_epochs", t.freeze_epochs);
  t.freeze_batch = c.get_size("freeze_batch", t.freeze_batch);
  t.unfreeze_epochs = c.get_size("unfreeze_epochs", t.unfreeze_epochs);
  t.unfreeze_batch = c.get_size("unfreeze_batch", t.unfreeze_batch);
  t.init_lr = c.get_double("init_lr", t.init_lr);
  t.min_lr_ratio = c.get_double("min_lr_ratio", t.min_lr_ratio);
  if (c.has("optimizer")) {
    try {
      t.optimizer.kind = parse_optimizer(c.get_string("optimizer", ""));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  t.optimizer.momentum = c.get_double("momentum", t.optimizer.momentum);
  t.optimizer.rms_decay = c.get_double("rms_decay", t.optimizer.rms_decay);
  t.optimizer.beta1 = c.get_double("adam_beta1", t.optimizer.beta1);
  t.optimizer.beta2 = c.get_double("adam_beta2", t.optimizer.beta2);
  t.optimizer.eps = c.get_double("optimizer_eps", t.optimizer.eps);
  t.phase1_trains_attention = c.get_bool("phase1_trains_attention", t.phase1_trains_attention);

  s.calibration_samples = c.get_size("calibration_samples", s.calibration_samples);
  s.weights = c.get_string("weights", s.weights);
  s.registry_dir = c.get_string("registry_dir", s.registry_dir);
  s.host = c.get_string("host", s.host);
  if (c.has("port")) {
    const auto p = c.get_int("port", 0);
    if (p < 0 || p > 65535) throw ConfigError("'port' must be in [0, 65535]");
    s.port = static_cast<int>(p);
  }
  s.top_k = c.get_size("top_k", s.top_k);
  s.seed = static_cast<std::uint64_t>(c.get_size("seed", s.seed));
  s.train.seed = s.seed;
  return s;
}

}  // namespace lostnet

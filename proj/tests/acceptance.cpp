// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Every check here runs at the tolerance and budget the criterion states.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "lostnet/bench.hpp"
#include "lostnet/dataset.hpp"
#include "lostnet/service.hpp"
#include "lostnet/synth.hpp"
#include "lostnet/tape.hpp"
#include "lostnet/train.hpp"
#include "oracles.hpp"

using namespace lostnet;
namespace fs = std::filesystem;
using Var = Tape<double>::Var;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("FAILED ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Shared between criteria: the training run feeds the service and determinism checks.
constexpr std::uint64_t kSeed = 2024;
constexpr std::size_t kTrainRes = 32;

TrainConfig acceptance_train_config() {
  TrainConfig c;
  c.freeze_epochs = 5;
  c.unfreeze_epochs = 40;
  c.freeze_batch = 16;
  c.unfreeze_batch = 16;
  c.init_lr = 1e-2;
  c.optimizer.kind = OptimizerKind::Sgd;
  c.optimizer.momentum = 0.9;
  c.seed = kSeed;
  return c;
}

struct TrainingRun {
  NetworkSpec spec = build_network(10, kTrainRes);
  TensorDataset data;
  WeightStore<float> initial;
  TrainResult result;
  std::vector<std::string> frozen_changed;
};

TrainingRun run_training() {
  TrainingRun run;
  run.data = synthetic_dataset(8, kSeed, kTrainRes);
  run.initial = init_weights<float>(run.spec, kSeed);
  calibrate_batchnorm(run.spec, run.initial, run.data);
  std::optional<WeightStore<float>> snapshot;
  const auto cfg = acceptance_train_config();
  run.result = train(run.spec, run.initial, run.data, nullptr, cfg,
                     [&](const EpochRecord& r, const WeightStore<float>& w) {
                       if (r.epoch + 1 == cfg.freeze_epochs) snapshot = w;
                     });
  if (!snapshot) throw std::logic_error("no phase-1 snapshot");
  for (const auto& p : parameter_table(run.spec)) {
    if (p.group == ParamGroup::Classifier) continue;
    if (!(snapshot->at(p.name) == run.initial.at(p.name))) run.frozen_changed.push_back(p.name);
  }
  return run;
}

std::optional<TrainingRun> g_run;

// -- parameter accounting ----------------------------------------------------

Outcome params_criterion() {
  Outcome o;
  const auto n = count_params(build_network(1000, 224, {16, 7}));
  const auto analytic = oracle::analytic_param_count(1000, 16, 7);
  const double rel = (static_cast<double>(n) - 3505000.0) / 3505000.0;
  o.note("count=" + std::to_string(n) + " analytic=" + std::to_string(analytic) + " vs 3,505,000 " +
         fmt("%+.4f%%", 100 * rel));
  o.require(std::abs(rel) <= 0.03, "within 3%");
  o.require(n == analytic, "equals analytic count");
  return o;
}

// -- FLOP accounting ---------------------------------------------------------

Outcome flops_criterion() {
  Outcome o;
  const auto spec = build_network(1000, 224);
  const auto flops = count_flops(spec);
  o.note("count_flops(224)=" + std::to_string(flops) + fmt(" (%.2fM; reference 665.12M)", flops / 1e6));
  const auto costs = flop_breakdown(spec, spec.input_shape());
  std::size_t stages = 0, bad = 0;
  for (std::size_t i = 0; i + 1 < costs.size(); ++i) {
    if (costs[i].kind != "depthwise") continue;
    const auto& dw = costs[i];
    const auto& pw = costs[i + 1];
    if (pw.kind != "pointwise") {
      ++bad;
      continue;
    }
    const std::size_t df = dw.output.h(), in = dw.output.c(), out = pw.output.c();
    // Standard-conv MACs for the same shapes, written out directly.
    const double std_macs = static_cast<double>(df * df) * 9.0 * static_cast<double>(in * out);
    const double counted = static_cast<double>(dw.macs + pw.macs) / std_macs;
    if (std::abs(counted - separable_ratio(df, 3, in, out)) > 1.0 / std_macs) ++bad;
    ++stages;
  }
  o.note(std::to_string(stages) + " separable stages checked");
  o.require(stages == 17 && bad == 0, "every separable stage ratio equals separable_ratio");
  const double limit = separable_ratio(7, 3, 16, std::size_t{1} << 24);
  o.note(fmt("ratio at N=2^24: %.9f", limit));
  o.require(std::abs(limit - 1.0 / 9.0) < 1e-6, "Dk=3 limit -> 1/9");
  return o;
}

// -- numerics ----------------------------------------------------------------

template <typename T>
double conv_family_max_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int kind = trial % 3;
    const std::size_t n = 1 + rng() % 2, h = 1 + rng() % 9, w = 1 + rng() % 9;
    std::size_t cin = 1 + rng() % 6, cout = 1 + rng() % 6, k = 1 + 2 * (rng() % 2), groups = 1;
    std::size_t stride = 1 + rng() % 2, pad = rng() % 2;
    if (kind == 1) {
      groups = cin;
      cout = cin;
      k = 3;
      pad = 1;
    } else if (kind == 2) {
      k = 1;
      pad = 0;
      stride = 1;
    } else if (rng() % 3 == 0 && cin % 2 == 0) {
      groups = 2;
      cout = 2 * (1 + rng() % 3);
    }
    if (h + 2 * pad < k || w + 2 * pad < k) pad = k / 2;
    auto x = oracle::random_tensor<T>(Shape(n, cin, h, w), rng);
    auto wt = oracle::random_tensor<T>(Shape(cout, cin / groups, k, k), rng);
    std::vector<T> bias = (rng() % 2) ? oracle::random_vector<T>(cout, rng) : std::vector<T>{};
    ConvParams<T> p{wt, bias.empty() ? std::nullopt : std::optional(bias), stride, pad, groups};
    const Tensor<T> y = kind == 1 ? depthwise_conv2d(x, p) : (kind == 2 ? pointwise_conv2d(x, p) : conv2d(x, p));
    worst = std::max(worst, oracle::max_abs_diff(y, oracle::naive_conv2d(x, wt, bias, stride, pad, groups)));
  }
  return worst;
}

template <typename T>
double pool_max_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Shape s(1 + rng() % 3, 1 + rng() % 5, 1 + rng() % 6, 1 + rng() % 6);
    const auto x = oracle::random_tensor<T>(s, rng, -5, 5);
    const auto ga = global_avg_pool(x), gm = global_max_pool(x), ca = channel_avg(x), cm = channel_max(x);
    for (std::size_t n = 0; n < s.n(); ++n) {
      for (std::size_t c = 0; c < s.c(); ++c) {
        double sum = 0, mx = -INFINITY;
        for (std::size_t h = 0; h < s.h(); ++h)
          for (std::size_t w = 0; w < s.w(); ++w) {
            sum += x.at(n, c, h, w);
            mx = std::max(mx, static_cast<double>(x.at(n, c, h, w)));
          }
        worst = std::max({worst, std::abs(ga.at(n, c, 0, 0) - sum / static_cast<double>(s.plane())),
                          std::abs(gm.at(n, c, 0, 0) - mx)});
      }
      for (std::size_t h = 0; h < s.h(); ++h)
        for (std::size_t w = 0; w < s.w(); ++w) {
          double sum = 0, mx = -INFINITY;
          for (std::size_t c = 0; c < s.c(); ++c) {
            sum += x.at(n, c, h, w);
            mx = std::max(mx, static_cast<double>(x.at(n, c, h, w)));
          }
          worst = std::max({worst, std::abs(ca.at(n, 0, h, w) - sum / static_cast<double>(s.c())),
                            std::abs(cm.at(n, 0, h, w) - mx)});
        }
    }
  }
  return worst;
}

template <typename T>
double linear_max_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 4, c = 1 + rng() % 6, h = 1 + rng() % 3, out = 1 + rng() % 8;
    const auto x = oracle::random_tensor<T>(Shape(n, c, h, h), rng);
    const auto w = oracle::random_tensor<T>(Shape(c * h * h, out, 1, 1), rng);
    const auto b = oracle::random_vector<T>(out, rng);
    worst = std::max(worst, oracle::max_abs_diff(linear(x, w, std::span<const T>(b)), oracle::naive_linear(x, w, b)));
  }
  return worst;
}

using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

// Largest relative error between tape gradients of sum(r * y) and central differences.
double gradient_error(const std::vector<Tensor<double>>& inputs, const Builder& build, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<double> r;
  {
    Tape<double> probe(false);
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(probe.constant(t));
    r = oracle::random_tensor<double>(probe.value(build(probe, leaves)).shape(), rng);
  }
  Tape<double> tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.parameter(t));
  tape.backward(build(tape, leaves), r);
  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto f = [&](const Tensor<double>& xi) {
      Tape<double> t(false);
      std::vector<Var> ls;
      for (std::size_t j = 0; j < inputs.size(); ++j) ls.push_back(t.constant(j == i ? xi : inputs[j]));
      return oracle::weighted_sum(t.value(build(t, ls)), r);
    };
    worst = std::max(worst, oracle::relative_error(tape.grad(leaves[i]), oracle::numeric_gradient(f, inputs[i], 1e-5)));
  }
  return worst;
}

Tensor<double> away_from_kinks(Shape s, std::mt19937_64& rng) {
  auto t = oracle::random_tensor<double>(s, rng, -2, 8);
  for (auto& v : t.values()) {
    if (std::abs(v) < 0.05) v += 0.1;
    if (std::abs(v - 6) < 0.05) v += 0.1;
  }
  return t;
}

Tensor<double> distinct(Shape s, std::mt19937_64& rng) {
  auto t = oracle::random_tensor<double>(s, rng);
  std::vector<std::size_t> perm(t.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(perm[i]) * 0.1 + 0.01 * t[i];
  return t;
}

Outcome numerics_criterion() {
  Outcome o;
  const double cf = conv_family_max_error<float>(11), cd = conv_family_max_error<double>(12);
  const double pf = pool_max_error<float>(23), pd = pool_max_error<double>(24);
  const double lf = linear_max_error<float>(31), ld = linear_max_error<double>(32);
  o.note(fmt("conv f32 %.2e", cf) + fmt(" f64 %.2e", cd) + fmt("; pool f32 %.2e", pf) + fmt(" f64 %.2e", pd) +
         fmt("; linear f32 %.2e", lf) + fmt(" f64 %.2e", ld));
  o.require(cf < 1e-5 && pf < 1e-5 && lf < 1e-5, "float ops within 1e-5 of oracles on 200 cases each");
  o.require(cd < 1e-9 && pd < 1e-9 && ld < 1e-9, "double ops within 1e-9 of oracles on 200 cases each");

  struct OpCase {
    std::string name;
    std::function<std::pair<std::vector<Tensor<double>>, Builder>(std::mt19937_64&)> make;
  };
  const std::vector<OpCase> ops{
      {"conv2d",
       [](std::mt19937_64& rng) {
         const std::size_t cin = 2 * (1 + rng() % 2), cout = 2 * (1 + rng() % 2), groups = (rng() % 2) ? 2 : 1;
         const std::size_t kern = (rng() % 2) ? 3 : 1, stride = 1 + rng() % 2, pad = kern / 2;
         std::vector<Tensor<double>> in{oracle::random_tensor<double>(Shape(2, cin, 5, 4), rng),
                                        oracle::random_tensor<double>(Shape(cout, cin / groups, kern, kern), rng),
                                        oracle::random_tensor<double>(vector_shape(cout), rng)};
         return std::pair{in, Builder([=](Tape<double>& t, const std::vector<Var>& v) {
                            return t.conv2d(v[0], v[1], v[2], stride, pad, groups);
                          })};
       }},
      {"depthwise",
       [](std::mt19937_64& rng) {
         const std::size_t c = 1 + rng() % 4, stride = 1 + rng() % 2;
         std::vector<Tensor<double>> in{oracle::random_tensor<double>(Shape(2, c, 6, 5), rng),
                                        oracle::random_tensor<double>(Shape(c, 1, 3, 3), rng)};
         return std::pair{in, Builder([=](Tape<double>& t, const std::vector<Var>& v) {
                            return t.conv2d(v[0], v[1], std::nullopt, stride, 1, c);
                          })};
       }},
      {"pointwise",
       [](std::mt19937_64& rng) {
         const std::size_t cin = 1 + rng() % 5, cout = 1 + rng() % 5;
         std::vector<Tensor<double>> in{oracle::random_tensor<double>(Shape(2, cin, 3, 4), rng),
                                        oracle::random_tensor<double>(Shape(cout, cin, 1, 1), rng)};
         return std::pair{in, Builder([](Tape<double>& t, const std::vector<Var>& v) {
                            return t.conv2d(v[0], v[1], std::nullopt, 1, 0, 1);
                          })};
       }},
      {"relu6",
       [](std::mt19937_64& rng) {
         return std::pair{std::vector{away_from_kinks(Shape(2, 3, 3, 3), rng)},
                          Builder([](Tape<double>& t, const std::vector<Var>& v) { return t.relu6(v[0]); })};
       }},
      {"relu",
       [](std::mt19937_64& rng) {
         return std::pair{std::vector{away_from_kinks(Shape(2, 3, 2, 2), rng)},
                          Builder([](Tape<double>& t, const std::vector<Var>& v) { return t.relu(v[0]); })};
       }},
      {"sigmoid",
       [](std::mt19937_64& rng) {
         return std::pair{std::vector{oracle::random_tensor<double>(Shape(2, 3, 2, 2), rng, -4, 4)},
                          Builder([](Tape<double>& t, const std::vector<Var>& v) { return t.sigmoid(v[0]); })};
       }},
      {"softmax",
       [](std::mt19937_64& rng) {
         const std::size_t axis = 1 + rng() % 3;
         return std::pair{std::vector{oracle::random_tensor<double>(Shape(2, 4, 3, 2), rng, -3, 3)},
                          Builder([=](Tape<double>& t, const std::vector<Var>& v) { return t.softmax(v[0], axis); })};
       }},
      {"batchnorm-train",
       [](std::mt19937_64& rng) {
         const std::size_t c = 1 + rng() % 3;
         std::vector<Tensor<double>> in{oracle::random_tensor<double>(Shape(3, c, 3, 3), rng, -2, 2),
                                        oracle::random_tensor<double>(vector_shape(c), rng, 0.5, 1.5),
                                        oracle::random_tensor<double>(vector_shape(c), rng)};
         return std::pair{in, Builder([=](Tape<double>& t, const std::vector<Var>& v) {
                            std::vector<double> rm(c, 0.0), rv(c, 1.0);
                            return t.batchnorm(v[0], v[1], v[2], std::span<double>(rm), std::span<double>(rv),
                                               BatchNormMode::Training);
                          })};
       }},
      {"batchnorm-infer",
       [](std::mt19937_64& rng) {
         const std::size_t c = 1 + rng() % 3;
         std::vector<Tensor<double>> in{oracle::random_tensor<double>(Shape(2, c, 3, 3), rng, -2, 2),
                                        oracle::random_tensor<double>(vector_shape(c), rng, 0.5, 1.5),
                                        oracle::random_tensor<double>(vector_shape(c), rng)};
         const auto rm = oracle::random_vector<double>(c, rng), rv = oracle::random_vector<double>(c, rng, 0.5, 2);
         return std::pair{in, Builder([=](Tape<double>& t, const std::vector<Var>& v) {
                            return t.batchnorm(v[0], v[1], v[2], std::span<const double>(rm), std::span<const double>(rv));
                          })};
       }},
      {"global-avg-pool",
       [](std::mt19937_64& rng) {
         return std::pair{std::vector{distinct(Shape(2, 1 + rng() % 3, 2 + rng() % 3, 2 + rng() % 3), rng)},
                          Builder([](Tape<double>& t, const std::vector<Var>& v) { return t.global_avg_pool(v[0]); })};
       }},
      {"global-max-pool",
       [](std::mt19937_64& rng) {
         return std::pair{std::vector{distinct(Shape(2, 1 + rng() % 3, 2 + rng() % 3, 2 + rng() % 3), rng)},
                          Builder([](Tape<double>& t, const std::vector<Var>& v) { return t.global_max_pool(v[0]); })};
       }},
      {"channel-avg",
       [](std::mt19937_64& rng) {
         return std::pair{std::vector{distinct(Shape(2, 1 + rng() % 3, 2 + rng() % 3, 2 + rng() % 3), rng)},
                          Builder([](Tape<double>& t, const std::vector<Var>& v) { return t.channel_avg(v[0]); })};
       }},
      {"channel-max",
       [](std::mt19937_64& rng) {
         return std::pair{std::vector{distinct(Shape(2, 1 + rng() % 3, 2 + rng() % 3, 2 + rng() % 3), rng)},
                          Builder([](Tape<double>& t, const std::vector<Var>& v) { return t.channel_max(v[0]); })};
       }},
      {"linear",
       [](std::mt19937_64& rng) {
         const std::size_t n = 1 + rng() % 3, in = 1 + rng() % 6, out = 1 + rng() % 5;
         std::vector<Tensor<double>> t{oracle::random_tensor<double>(Shape(n, in, 1, 1), rng),
                                       oracle::random_tensor<double>(Shape(in, out, 1, 1), rng),
                                       oracle::random_tensor<double>(vector_shape(out), rng)};
         return std::pair{t, Builder([](Tape<double>& tp, const std::vector<Var>& v) {
                            return tp.linear(v[0], v[1], v[2]);
                          })};
       }},
      {"softmax-cross-entropy",
       [](std::mt19937_64& rng) {
         const std::size_t n = 1 + rng() % 4, classes = 2 + rng() % 8;
         std::vector<std::size_t> labels(n);
         for (auto& l : labels) l = rng() % classes;
         return std::pair{std::vector{oracle::random_tensor<double>(Shape(n, classes, 1, 1), rng, -3, 3)},
                          Builder([=](Tape<double>& t, const std::vector<Var>& v) {
                            return t.softmax_cross_entropy(v[0], labels);
                          })};
       }},
  };
  double worst = 0;
  std::string worst_op;
  std::size_t cases = 0;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    std::mt19937_64 rng(100 + i);
    for (int k = 0; k < 20; ++k) {
      auto [inputs, build] = ops[i].make(rng);
      const double e = gradient_error(inputs, build, 1000 * i + k);
      if (e > worst) worst = e, worst_op = ops[i].name;
      ++cases;
    }
  }
  o.note(std::to_string(ops.size()) + " ops x 20 gradient cases, worst rel err " + fmt("%.2e", worst) + " (" +
         worst_op + ")");
  o.require(worst < 1e-4, "finite-difference gradients within 1e-4");
  return o;
}

// -- CBAM --------------------------------------------------------------------

template <typename T>
ChannelAttentionParams<T> random_channel(std::size_t c, std::size_t r, std::mt19937_64& rng) {
  return {oracle::random_tensor<T>(Shape(c, c / r, 1, 1), rng), oracle::random_tensor<T>(Shape(c / r, c, 1, 1), rng),
          r};
}

template <typename T>
SpatialAttentionParams<T> random_spatial(std::size_t k, std::mt19937_64& rng) {
  return {ConvParams<T>{oracle::random_tensor<T>(Shape(1, 2, k, k), rng), oracle::random_vector<T>(1, rng), 1,
                        (k - 1) / 2, 1}};
}

Outcome cbam_criterion() {
  Outcome o;
  std::mt19937_64 rng(41);
  bool half = true;
  for (std::size_t c : {16u, 32u, 64u}) {
    const auto gate = channel_attention(Tensor<float>(Shape(3, c, 5, 5)), random_channel<float>(c, 16, rng));
    for (float v : gate.values()) half = half && v == 0.5f;
    const auto gd = channel_attention(Tensor<double>(Shape(1, c, 4, 4)), random_channel<double>(c, 8, rng));
    for (double v : gd.values()) half = half && v == 0.5;
  }
  o.require(half, "zero-input channel attention exactly 0.5");
  std::size_t preserved = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t r = 1 + rng() % 4, c = r * (1 + rng() % 8);
    const Shape s(1 + rng() % 3, c, 1 + rng() % 12, 1 + rng() % 12);
    const std::size_t k = 1 + 2 * (rng() % 4);
    const auto f = oracle::random_tensor<float>(s, rng);
    preserved += cbam_apply(f, random_channel<float>(c, r, rng), random_spatial<float>(k, rng)).shape() == s;
  }
  o.note(std::to_string(preserved) + "/50 shapes preserved");
  o.require(preserved == 50, "shape-preserving on 50 seeded shapes");
  bool staged = true;
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = oracle::random_tensor<float>(Shape(2, 32, 9, 9), rng);
    const auto ch = random_channel<float>(32, 16, rng);
    const auto sp = random_spatial<float>(7, rng);
    const auto refined = mul_broadcast(f, channel_attention(f, ch));
    staged = staged && cbam_apply(f, ch, sp) == mul_broadcast(refined, spatial_attention(refined, sp));
  }
  o.require(staged, "staged composition bit-equal");
  return o;
}

// -- training ----------------------------------------------------------------

Outcome training_criterion() {
  Outcome o;
  g_run = run_training();
  const auto& h = g_run->result.history;
  bool decreasing = h.size() >= 5;
  std::string losses;
  for (std::size_t e = 0; e < 5 && e < h.size(); ++e) {
    losses += (e ? "," : "") + fmt("%.4f", h[e].loss);
    if (e > 0) decreasing = decreasing && h[e].loss < h[e - 1].loss;
  }
  const double acc = accuracy_of(g_run->spec, g_run->result.weights, g_run->data);
  o.note("phase-1 losses " + losses + fmt("; final loss %.4f", h.back().loss) + fmt("; train accuracy %.4f", acc));
  o.require(decreasing, "loss strictly decreasing over first 5 epochs");
  o.require(acc >= 0.95, "final train accuracy >= 0.95");
  o.note(std::to_string(g_run->frozen_changed.size()) + " frozen tensors changed in phase 1");
  o.require(g_run->frozen_changed.empty(),
            "frozen tensors bit-unchanged" + (g_run->frozen_changed.empty() ? "" : " (" + g_run->frozen_changed[0] + ")"));
  o.require(h.size() == 45, "45 epochs recorded");
  return o;
}

// -- metrics -----------------------------------------------------------------

Outcome metrics_criterion() {
  Outcome o;
  std::mt19937_64 rng(51);
  const std::size_t k = 10, n = 1000;
  ConfusionMatrix cm(k);
  std::vector<std::size_t> pred(n), actual(n);
  for (std::size_t i = 0; i < n; ++i) {
    pred[i] = rng() % k;
    actual[i] = (rng() % 3 == 0) ? pred[i] : rng() % k;
    cm.add(pred[i], actual[i]);
  }
  std::vector<double> epochs(7);
  for (auto& e : epochs) e = static_cast<double>(rng() % 1000) / 1000.0;
  const auto r = summarize(cm, epochs);
  bool exact = true;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += pred[i] == actual[i];
  exact = exact && r.accuracy == static_cast<double>(correct) / n;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool p = pred[i] == c, a = actual[i] == c;
      tp += p && a;
      fp += p && !a;
      fn += !p && a;
      tn += !p && !a;
    }
    const auto& m = r.per_class[c];
    exact = exact && m.tp == tp && m.fp == fp && m.fn == fn && m.tn == tn;
    exact = exact && m.accuracy == static_cast<double>(tp + tn) / n;
    exact = exact && m.recall && *m.recall == static_cast<double>(tp) / static_cast<double>(tp + fn);
    exact = exact && m.precision && *m.precision == static_cast<double>(tp) / static_cast<double>(tp + fp);
    for (std::size_t a = 0; a < k; ++a) {
      std::uint64_t cell = 0;
      for (std::size_t i = 0; i < n; ++i) cell += pred[i] == c && actual[i] == a;
      exact = exact && cm.at(c, a) == cell;
    }
  }
  double ap = 0;
  for (double e : epochs) ap += e;
  ap /= static_cast<double>(epochs.size());
  exact = exact && r.ap && *r.ap == ap;
  o.require(exact, "confusion/accuracy/recall/precision/AP match brute-force counts on 1000 samples");

  Tensor<double> uniform(Shape(4, 10, 1, 1), 0.1);
  const std::vector<std::size_t> labels{0, 3, 7, 9};
  const double ce = cross_entropy(uniform, std::span<const std::size_t>(labels));
  o.note(fmt("uniform loss %.12f", ce));
  o.require(std::abs(ce - std::log(10.0)) <= 1e-9, "uniform-prediction loss = ln 10 +/- 1e-9");

  const std::vector<double> sep{0.95, 0.9, 0.8, 0.4, 0.3, 0.1};
  const std::vector<bool> pos{true, true, true, false, false, false};
  const auto auc_sep = binary_roc(sep, pos).auc;
  const auto auc_const = binary_roc(std::vector<double>(6, 0.5), pos).auc;
  o.require(auc_sep && *auc_sep == 1.0, "separable scores give AUC 1.0");
  o.require(auc_const && *auc_const == 0.5, "constant scores give AUC 0.5");
  return o;
}

// -- pHash -------------------------------------------------------------------

Outcome phash_criterion() {
  Outcome o;
  bool one_bit = true;
  for (std::uint8_t v : {1, 60, 128, 255}) {
    Image img(37, 23);
    std::fill(img.rgb.begin(), img.rgb.end(), v);
    one_bit = one_bit && std::popcount(phash_compute(img).bits) == 1;
  }
  o.require(one_bit, "constant image has exactly one set bit");

  std::mt19937_64 rng(61);
  double dct_err = 0, parseval_err = 0;
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 3; ++trial) {
    GrayImage g{32, 32, std::vector<double>(1024)};
    for (auto& v : g.values) v = u(rng);
    const auto got = dct2d(g);
    const auto want = oracle::naive_dct2d(g.values, 32);
    double a = 0, b = 0;
    for (std::size_t i = 0; i < want.size(); ++i) {
      dct_err = std::max(dct_err, std::abs(got[i] - want[i]));
      a += g.values[i] * g.values[i];
      b += got[i] * got[i];
    }
    parseval_err = std::max(parseval_err, std::abs(a - b));
  }
  o.note(fmt("dct max |d| %.2e", dct_err) + fmt(", Parseval |d| %.2e", parseval_err));
  o.require(dct_err < 1e-9, "dct2d matches O(N^4) oracle within 1e-9");
  o.require(parseval_err < 1e-9, "Parseval");

  int worst = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    const Image img = synth_image(i % 10, i / 10, 6100, 128);
    const Image pert = scale_brightness(resize_bilinear(img, 64, 64), 1.1);
    worst = std::max(worst, hamming(phash_compute(img), phash_compute(pert)));
  }
  o.note("perturbed-copy worst distance " + std::to_string(worst));
  o.require(worst <= 10, "perturbed copies within 10/64 on 50 images");

  double sum = 0;
  const int pairs = 200;
  for (int i = 0; i < pairs; ++i) {
    sum += hamming(phash_compute(noise_image(7000 + 2 * i, 64, 64)), phash_compute(noise_image(7001 + 2 * i, 64, 64)));
  }
  const double mean = sum / pairs;
  o.note(fmt("noise-pair mean distance %.2f over 200 pairs", mean));
  o.require(std::abs(mean - 32) <= 4, "independent-noise pairs average 32 +/- 4");
  return o;
}

// -- service round trip ------------------------------------------------------

struct Scratch {
  fs::path path = fs::temp_directory_path() / ("lostnet_acceptance_" + std::to_string(::getpid()));
  Scratch() {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Scratch() { fs::remove_all(path); }
};

Outcome service_criterion() {
  Outcome o;
  if (!g_run) throw std::logic_error("service criterion needs the training run");
  Scratch scratch;
  const Classifier clf(g_run->spec, g_run->result.weights, default_classes(), kTrainRes);
  RegistryOptions ropt;
  ropt.durable = true;

  std::vector<std::string> images;  // by id - 1
  nlohmann::json before;
  {
    Registry reg(scratch.path, default_classes(), ropt);
    HttpService svc(clf, reg);
    const int port = svc.start();
    httplib::Client client("127.0.0.1", port);
    bool all_created = true;
    for (std::size_t f = 0; f < 10; ++f) {
      for (std::uint64_t i = 0; i < 3; ++i) {
        // Held-in samples: the same generator and seed as the training corpus.
        images.push_back(to_string(encode_png(synth_image(f, i, kSeed, 64))));
        const auto res = client.Post(
            "/api/items", httplib::MultipartFormDataItems{{"image", images.back(), "item.png", "image/png"},
                                                          {"category", default_classes()[f], "", ""},
                                                          {"description", "item " + std::to_string(images.size()), "", ""},
                                                          {"location", "desk " + std::to_string(f), "", ""}});
        all_created = all_created && res && res->status == 201;
      }
    }
    o.require(all_created, "30 registrations via HTTP");

    const std::size_t target = 7;
    const Image original = decode_image(images[target - 1]);
    const auto query = to_string(encode_png(scale_brightness(resize_bilinear(original, 32, 32), 1.1)));
    const auto res = client.Post("/api/search", httplib::MultipartFormDataItems{{"image", query, "q.png", "image/png"}});
    o.require(res && res->status == 200, "search returns 200");
    if (res && res->status == 200) {
      const auto j = nlohmann::json::parse(res->body);
      const auto want = reg.get(target).category;
      o.note("query category " + j["category"]["name"].get<std::string>() + fmt(" (conf %.3f)", j["category"]["confidence"].get<double>()) +
             ", expected " + want);
      o.require(j["category"]["name"] == want, "correct category");
      const auto& m = j["matches"];
      std::string ranking;
      for (const auto& x : m) ranking += (ranking.empty() ? "" : ",") + std::to_string(x["id"].get<int>()) + "@" +
                                         std::to_string(x["distance"].get<int>());
      o.note("matches " + ranking);
      o.require(!m.empty() && m[0]["id"] == target, "target ranked first");
      o.require(m.size() < 2 || m[0]["distance"].get<int>() < m[1]["distance"].get<int>(),
                "target strictly closest");
      o.require(j["schema_version"] == kSchemaVersion, "schema_version present");
    }

    // Report-only: how many of the 30 items a perturbed copy finds uniquely first.
    std::size_t unique_first = 0;
    for (std::size_t id = 1; id <= images.size(); ++id) {
      const auto q = encode_png(scale_brightness(resize_bilinear(decode_image(images[id - 1]), 32, 32), 1.1));
      const auto r = search(clf, reg, q, 2);
      unique_first += !r.matches.empty() && r.matches[0].item.id == id &&
                      (r.matches.size() < 2 || r.matches[0].distance < r.matches[1].distance);
    }
    o.note("all-items sweep: " + std::to_string(unique_first) + "/30 uniquely first (report only)");

    const auto list = client.Get("/api/items");
    if (list && list->status == 200) before = nlohmann::json::parse(list->body)["items"];
    svc.stop();
  }

  Registry reopened(scratch.path, default_classes(), ropt);
  HttpService svc(clf, reopened);
  httplib::Client client("127.0.0.1", svc.start());
  const auto list = client.Get("/api/items");
  const auto after = list && list->status == 200 ? nlohmann::json::parse(list->body)["items"] : nlohmann::json();
  o.require(!reopened.recovered(), "journal restored cleanly");
  o.require(before.size() == 30 && after == before, "restart preserves all 30 records field-exactly");
  bool images_ok = true;
  for (std::size_t id = 1; id <= images.size(); ++id) {
    const auto r = client.Get("/api/items/" + std::to_string(id) + "/image");
    images_ok = images_ok && r && r->status == 200 && r->body == images[id - 1];
  }
  o.require(images_ok, "stored images served byte-exact after restart");
  return o;
}

// -- determinism -------------------------------------------------------------

Outcome determinism_criterion() {
  Outcome o;
  if (!g_run) throw std::logic_error("determinism criterion needs the training run");
  const auto spec = build_network(10, kTrainRes);
  o.require(init_weights<float>(spec, kSeed) == init_weights<float>(spec, kSeed), "init weights bit-identical");

  bool hashes = true;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto png = encode_png(synth_image(i % 10, i, kSeed, 64));
    hashes = hashes && phash_compute(png) == phash_compute(encode_png(synth_image(i % 10, i, kSeed, 64)));
  }
  o.require(hashes, "hashes identical");

  Manifest m{"", default_classes(), {}};
  for (std::size_t c = 0; c < 10; ++c)
    for (std::size_t i = 0; i < 8; ++i) m.entries.push_back({std::to_string(c) + "/" + std::to_string(i) + ".png", c});
  o.require(split_dataset(m, kSeed) == split_dataset(m, kSeed), "splits identical");

  const auto second = run_training();
  o.require(second.result.history == g_run->result.history, "training history bit-identical");
  o.require(second.result.weights == g_run->result.weights, "trained weights bit-identical");
  std::ostringstream a, b;
  save_weights(second.result.weights, a);
  save_weights(g_run->result.weights, b);
  o.require(a.str() == b.str(), "serialized weights byte-identical");
  o.note("weights sha256 " + sha256_hex(a.str()).substr(0, 16));
  return o;
}

// -- bench -------------------------------------------------------------------

Outcome bench_criterion() {
  Outcome o;
  std::vector<LatencyReport> reports;
  for (std::size_t res : {96u, 160u, 224u}) {
    const auto spec = build_network(10, res);
    reports.push_back(bench_inference(spec, init_weights<float>(spec, 1), res, 5, 1));
    o.note(format_latency(reports.back()));
  }
  o.note("reference 1.5 s/image (context only)");
  bool ordered = true;
  for (std::size_t i = 1; i < reports.size(); ++i) ordered = ordered && reports[i - 1].p50_ms <= reports[i].p50_ms;
  o.require(ordered, "p50 latency nondecreasing across 96/160/224");
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double budget_s;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {"parameter-accounting", 1, params_criterion},
      {"flop-accounting", 1, flops_criterion},
      {"numerics", 120, numerics_criterion},
      {"cbam-correctness", 30, cbam_criterion},
      {"training", 600, training_criterion},
      {"metrics", 30, metrics_criterion},
      {"phash", 60, phash_criterion},
      {"service-round-trip", 120, service_criterion},
      {"determinism", 0, determinism_criterion},
      {"bench-inference", 0, bench_criterion},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0) o.require(secs < c.budget_s, "runtime budget " + fmt("%.0f s", c.budget_s));
    std::printf("%s %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", c.name, secs, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}

#pragma once

// Forward evaluation of a NetworkSpec against a WeightStore, on a Tape so the
// same code path serves inference and training.

#include <array>
#include <optional>
#include <type_traits>
#include <utility>
#include <vector>

#include "lostnet/attention.hpp"
#include "lostnet/network.hpp"
#include "lostnet/tape.hpp"
#include "lostnet/weights.hpp"

namespace lostnet {

struct ForwardOptions {
  /// Training: trainable groups use batch statistics and update running stats.
  bool training = false;
  std::array<bool, 3> frozen{false, false, false};
  BatchNormConfig bn{};

  bool is_frozen(ParamGroup g) const { return frozen[static_cast<std::size_t>(g)]; }
  bool trainable(ParamGroup g) const { return training && !is_frozen(g); }
  void freeze(ParamGroup g, bool on = true) { frozen[static_cast<std::size_t>(g)] = on; }
};

template <typename T>
struct NetworkOutput {
  typename Tape<T>::Var logits;
  /// Trainable parameter leaves, in parameter-table order.
  std::vector<std::pair<std::string, typename Tape<T>::Var>> params;
};

namespace detail {

template <typename T, typename Store>
class ForwardBuilder {
  using Var = typename Tape<T>::Var;
  static constexpr bool kMutable = !std::is_const_v<Store>;

 public:
  ForwardBuilder(Tape<T>& tape, Store& weights, const ForwardOptions& opt, NetworkOutput<T>& out)
      : tape_(tape), w_(weights), opt_(opt), out_(out) {}

  Var param(const std::string& name, ParamGroup g) {
    const bool train = opt_.trainable(g);
    Var v = tape_.parameter_ref(w_.at(name), train);
    if (train) out_.params.emplace_back(name, v);
    return v;
  }

  Var conv_bn(const ConvBnLayer& l, Var x) {
    Var w = param(l.name + ".conv.weight", l.group);
    std::optional<Var> b;
    if (l.bias) b = param(l.name + ".conv.bias", l.group);
    Var y = tape_.conv2d(x, w, b, l.stride, l.padding(), l.groups);
    if (l.batchnorm) {
      Var scale = param(l.name + ".bn.scale", l.group);
      Var shift = param(l.name + ".bn.shift", l.group);
      const std::string rm = l.name + ".bn.running_mean", rv = l.name + ".bn.running_var";
      if (opt_.trainable(l.group)) {
        if constexpr (kMutable) {
          y = tape_.batchnorm(y, scale, shift, w_.at(rm).values(), w_.at(rv).values(), BatchNormMode::Training,
                              opt_.bn);
        } else {
          throw std::logic_error("forward: training mode needs a mutable weight store");
        }
      } else {
        const auto& cm = std::as_const(w_).at(rm);
        const auto& cv = std::as_const(w_).at(rv);
        y = tape_.batchnorm(y, scale, shift, cm.values(), cv.values(), opt_.bn);
      }
    }
    if (l.act == Activation::Relu6) y = tape_.relu6(y);
    return y;
  }

  Var cbam(const CbamLayer& l, Var x) {
    Var w0 = param(l.name + ".channel.reduce", l.group);
    Var w1 = param(l.name + ".channel.expand", l.group);
    auto mlp = [&](Var d) { return tape_.linear(tape_.relu(tape_.linear(d, w0, std::nullopt)), w1, std::nullopt); };
    Var gate_c = tape_.sigmoid(tape_.add(mlp(tape_.global_avg_pool(x)), mlp(tape_.global_max_pool(x))));
    Var refined = tape_.mul(x, gate_c);
    Var sw = param(l.name + ".spatial.weight", l.group);
    Var sb = param(l.name + ".spatial.bias", l.group);
    Var pooled = tape_.concat(tape_.channel_avg(refined), tape_.channel_max(refined));
    Var gate_s = tape_.sigmoid(tape_.conv2d(pooled, sw, sb, 1, (l.spatial_kernel - 1) / 2, 1));
    return tape_.mul(refined, gate_s);
  }

  Var block(const InvertedResidualLayer& l, Var x) {
    Var h = x;
    for (const auto& s : l.stages()) h = conv_bn(s, h);
    if (l.config.has_shortcut()) h = tape_.add(h, x);
    return h;
  }

  Var linear(const LinearLayer& l, Var x) {
    Var w = param(l.name + ".weight", l.group);
    std::optional<Var> b;
    if (l.bias) b = param(l.name + ".bias", l.group);
    return tape_.linear(x, w, b);
  }

 private:
  Tape<T>& tape_;
  Store& w_;
  const ForwardOptions& opt_;
  NetworkOutput<T>& out_;
};

}  // namespace detail

/// Records the network on `tape`. Store may be const for inference.
template <typename T, typename Store>
NetworkOutput<T> forward(Tape<T>& tape, const NetworkSpec& spec, Store& weights, typename Tape<T>::Var input,
                         const ForwardOptions& opt = {}) {
  const Shape& in = tape.value(input).shape();
  if (in.c() != spec.input_channels) {
    throw ShapeError("forward: input " + in.str() + " does not have " + std::to_string(spec.input_channels) +
                     " channels");
  }
  NetworkOutput<T> out;
  detail::ForwardBuilder<T, Store> b(tape, weights, opt, out);
  auto x = input;
  for (const Layer& layer : spec.layers) {
    x = std::visit(detail::overloaded{
                       [&](const ConvBnLayer& l) { return b.conv_bn(l, x); },
                       [&](const CbamLayer& l) { return b.cbam(l, x); },
                       [&](const InvertedResidualLayer& l) { return b.block(l, x); },
                       [&](const GlobalPoolLayer&) { return tape.global_avg_pool(x); },
                       [&](const LinearLayer& l) { return b.linear(l, x); },
                   },
                   layer);
  }
  out.logits = x;
  return out;
}

/// Inference-mode logits (N, num_classes, 1, 1).
template <typename T>
Tensor<T> infer_logits(const NetworkSpec& spec, const WeightStore<T>& weights, const Tensor<T>& input) {
  Tape<T> tape(false);
  auto x = tape.constant(input);
  auto out = forward(tape, spec, weights, x);
  return tape.value(out.logits);
}

// ---------------------------------------------------------------------------
// Stand-alone block evaluation

template <typename T>
struct ConvBnWeights {
  Tensor<T> weight;
  std::vector<T> bias;  // empty: no bias
  std::vector<T> scale, shift, running_mean, running_var;
};

template <typename T>
struct InvertedResidualWeights {
  std::optional<ConvBnWeights<T>> expand;
  ConvBnWeights<T> depthwise;
  ConvBnWeights<T> project;
};

namespace detail {

template <typename T>
ConvBnWeights<T> gather_conv_bn(const WeightStore<T>& s, const std::string& name) {
  ConvBnWeights<T> w;
  auto vec = [&](const std::string& n) {
    const auto v = s.at(n).values();
    return std::vector<T>(v.begin(), v.end());
  };
  w.weight = s.at(name + ".conv.weight");
  if (s.contains(name + ".conv.bias")) w.bias = vec(name + ".conv.bias");
  w.scale = vec(name + ".bn.scale");
  w.shift = vec(name + ".bn.shift");
  w.running_mean = vec(name + ".bn.running_mean");
  w.running_var = vec(name + ".bn.running_var");
  return w;
}

template <typename T>
Tensor<T> apply_conv_bn(const Tensor<T>& x, const ConvBnWeights<T>& w, std::size_t stride, std::size_t groups,
                        bool act, BatchNormConfig cfg) {
  const std::size_t pad = w.weight.shape().h() / 2;
  Tensor<T> y = conv2d(x, w.weight, std::span<const T>(w.bias), stride, pad, groups);
  y = batchnorm_inference(y, std::span<const T>(w.scale), std::span<const T>(w.shift),
                          std::span<const T>(w.running_mean), std::span<const T>(w.running_var), cfg)
          .output;
  return act ? relu6(y) : y;
}

}  // namespace detail

template <typename T>
InvertedResidualWeights<T> block_weights(const WeightStore<T>& store, const InvertedResidualLayer& l) {
  InvertedResidualWeights<T> w;
  if (l.config.expansion != 1) w.expand = detail::gather_conv_bn(store, l.name + ".expand");
  w.depthwise = detail::gather_conv_bn(store, l.name + ".depthwise");
  w.project = detail::gather_conv_bn(store, l.name + ".project");
  return w;
}

/// expand (1x1, relu6) -> depthwise 3x3 (relu6) -> project (1x1, linear),
/// plus the shortcut when stride is 1 and channel counts match. Inference mode.
template <typename T>
Tensor<T> inverted_residual_forward(const Tensor<T>& x, const InvertedResidualConfig& cfg,
                                    const InvertedResidualWeights<T>& w, BatchNormConfig bn = {}) {
  const std::size_t hid = cfg.hidden();
  auto mismatch = [&](const std::string& what, const Shape& got, const Shape& want) {
    throw ShapeError("inverted_residual_forward: " + what + " weights " + got.str() + ", expected " + want.str());
  };
  if (x.shape().c() != cfg.in_channels) mismatch("input", x.shape(), Shape(x.shape().n(), cfg.in_channels, 0, 0));
  if (cfg.stride != 1 && cfg.stride != 2) throw ShapeError("inverted_residual_forward: stride must be 1 or 2");
  if ((cfg.expansion != 1) != w.expand.has_value()) {
    throw ShapeError("inverted_residual_forward: expansion " + std::to_string(cfg.expansion) +
                     (w.expand ? " but expand weights given" : " but no expand weights"));
  }
  if (w.expand && w.expand->weight.shape() != Shape(hid, cfg.in_channels, 1, 1)) {
    mismatch("expand", w.expand->weight.shape(), Shape(hid, cfg.in_channels, 1, 1));
  }
  if (w.depthwise.weight.shape() != Shape(hid, 1, 3, 3)) mismatch("depthwise", w.depthwise.weight.shape(), Shape(hid, 1, 3, 3));
  if (w.project.weight.shape() != Shape(cfg.out_channels, hid, 1, 1)) {
    mismatch("project", w.project.weight.shape(), Shape(cfg.out_channels, hid, 1, 1));
  }
  Tensor<T> h = x;
  if (w.expand) h = detail::apply_conv_bn(h, *w.expand, 1, 1, true, bn);
  h = detail::apply_conv_bn(h, w.depthwise, cfg.stride, hid, true, bn);
  h = detail::apply_conv_bn(h, w.project, 1, 1, false, bn);
  if (cfg.has_shortcut()) h = add(h, x);
  return h;
}

}  // namespace lostnet

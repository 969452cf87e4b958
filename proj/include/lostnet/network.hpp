#pragma once

// Layer graph of the MobileNetV2 + CBAM classifier and its exact parameter
// and FLOP accounting.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "lostnet/tensor.hpp"

namespace lostnet {

/// Which part of the network a parameter belongs to. Freezing acts per group.
enum class ParamGroup { Backbone, Attention, Classifier };

enum class Activation { None, Relu6 };

/// Convolution (padding kernel/2) optionally followed by batchnorm and an activation.
struct ConvBnLayer {
  std::string name;
  std::size_t in = 0, out = 0, kernel = 1, stride = 1, groups = 1;
  bool bias = false;
  bool batchnorm = true;
  Activation act = Activation::Relu6;
  ParamGroup group = ParamGroup::Backbone;

  std::size_t padding() const { return kernel / 2; }
  friend bool operator==(const ConvBnLayer&, const ConvBnLayer&) = default;
};

struct CbamLayer {
  std::string name;
  std::size_t channels = 0;
  std::size_t reduction = 16;
  std::size_t spatial_kernel = 7;
  ParamGroup group = ParamGroup::Attention;

  std::size_t hidden() const { return channels / reduction; }
  friend bool operator==(const CbamLayer&, const CbamLayer&) = default;
};

struct InvertedResidualConfig {
  std::size_t in_channels = 0, out_channels = 0, stride = 1, expansion = 1;

  bool has_shortcut() const { return stride == 1 && in_channels == out_channels; }
  std::size_t hidden() const { return in_channels * expansion; }
  friend bool operator==(const InvertedResidualConfig&, const InvertedResidualConfig&) = default;
};

struct InvertedResidualLayer {
  std::string name;
  InvertedResidualConfig config;
  ParamGroup group = ParamGroup::Backbone;

  /// expand (omitted when expansion == 1) -> depthwise 3x3 -> linear project.
  std::vector<ConvBnLayer> stages() const {
    std::vector<ConvBnLayer> s;
    const std::size_t hid = config.hidden();
    if (config.expansion != 1) {
      s.push_back({name + ".expand", config.in_channels, hid, 1, 1, 1, false, true, Activation::Relu6, group});
    }
    s.push_back({name + ".depthwise", hid, hid, 3, config.stride, hid, false, true, Activation::Relu6, group});
    s.push_back({name + ".project", hid, config.out_channels, 1, 1, 1, false, true, Activation::None, group});
    return s;
  }
  friend bool operator==(const InvertedResidualLayer&, const InvertedResidualLayer&) = default;
};

struct GlobalPoolLayer {
  std::string name;
  friend bool operator==(const GlobalPoolLayer&, const GlobalPoolLayer&) = default;
};

struct LinearLayer {
  std::string name;
  std::size_t in = 0, out = 0;
  bool bias = true;
  ParamGroup group = ParamGroup::Classifier;
  friend bool operator==(const LinearLayer&, const LinearLayer&) = default;
};

using Layer = std::variant<ConvBnLayer, CbamLayer, InvertedResidualLayer, GlobalPoolLayer, LinearLayer>;

struct NetworkSpec {
  std::vector<Layer> layers;
  std::size_t num_classes = 0;
  std::size_t input_resolution = 224;
  std::size_t input_channels = 3;

  Shape input_shape(std::size_t batch = 1) const {
    return Shape(batch, input_channels, input_resolution, input_resolution);
  }
  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

struct CbamOptions {
  std::size_t reduction = 16;
  std::size_t spatial_kernel = 7;
};

/// (expansion t, output channels c, repeats n, first stride s) per bottleneck stage.
struct BottleneckStage {
  std::size_t expansion, channels, repeats, stride;
};

inline constexpr BottleneckStage kMobileNetV2Schedule[] = {
    {1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2}, {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1},
};

inline constexpr std::size_t kStemChannels = 32;
inline constexpr std::size_t kHeadChannels = 1280;

inline NetworkSpec build_network(std::size_t num_classes, std::size_t input_resolution = 224,
                                 CbamOptions cbam = {}) {
  if (num_classes == 0) throw std::invalid_argument("build_network: num_classes must be >= 1");
  if (input_resolution == 0) throw std::invalid_argument("build_network: input resolution must be positive");
  if (cbam.reduction == 0 || kStemChannels % cbam.reduction != 0) {
    throw std::invalid_argument("build_network: CBAM reduction ratio must divide " + std::to_string(kStemChannels));
  }
  if (cbam.spatial_kernel % 2 == 0) throw std::invalid_argument("build_network: CBAM spatial kernel must be odd");

  NetworkSpec spec;
  spec.num_classes = num_classes;
  spec.input_resolution = input_resolution;
  spec.layers.push_back(ConvBnLayer{"stem", 3, kStemChannels, 3, 2, 1, false, true, Activation::Relu6,
                                    ParamGroup::Backbone});
  spec.layers.push_back(CbamLayer{"cbam", kStemChannels, cbam.reduction, cbam.spatial_kernel, ParamGroup::Attention});
  std::size_t in = kStemChannels;
  std::size_t index = 0;
  for (const auto& st : kMobileNetV2Schedule) {
    for (std::size_t r = 0; r < st.repeats; ++r) {
      InvertedResidualConfig cfg{in, st.channels, r == 0 ? st.stride : 1, st.expansion};
      spec.layers.push_back(InvertedResidualLayer{"block" + std::to_string(index++), cfg, ParamGroup::Backbone});
      in = st.channels;
    }
  }
  spec.layers.push_back(ConvBnLayer{"head", in, kHeadChannels, 1, 1, 1, false, true, Activation::Relu6,
                                    ParamGroup::Backbone});
  spec.layers.push_back(GlobalPoolLayer{"pool"});
  spec.layers.push_back(LinearLayer{"classifier", kHeadChannels, num_classes, true, ParamGroup::Classifier});
  return spec;
}

// ---------------------------------------------------------------------------
// Parameter table

struct ParamInfo {
  std::string name;
  Shape shape;
  bool trainable = true;   // false for batchnorm running statistics
  ParamGroup group = ParamGroup::Backbone;
  std::size_t fan_in = 0;  // for weight initialization; 0 for non-weights
};

namespace detail {

inline void conv_bn_params(const ConvBnLayer& l, std::vector<ParamInfo>& out) {
  const std::size_t fan_in = (l.in / l.groups) * l.kernel * l.kernel;
  out.push_back({l.name + ".conv.weight", Shape(l.out, l.in / l.groups, l.kernel, l.kernel), true, l.group, fan_in});
  if (l.bias) out.push_back({l.name + ".conv.bias", vector_shape(l.out), true, l.group, 0});
  if (l.batchnorm) {
    out.push_back({l.name + ".bn.scale", vector_shape(l.out), true, l.group, 0});
    out.push_back({l.name + ".bn.shift", vector_shape(l.out), true, l.group, 0});
    out.push_back({l.name + ".bn.running_mean", vector_shape(l.out), false, l.group, 0});
    out.push_back({l.name + ".bn.running_var", vector_shape(l.out), false, l.group, 0});
  }
}

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

}  // namespace detail

/// Every tensor the network owns, in a fixed order (the weight-file order).
inline std::vector<ParamInfo> parameter_table(const NetworkSpec& spec) {
  std::vector<ParamInfo> out;
  for (const Layer& layer : spec.layers) {
    std::visit(detail::overloaded{
                   [&](const ConvBnLayer& l) { detail::conv_bn_params(l, out); },
                   [&](const CbamLayer& l) {
                     const std::size_t c = l.channels, h = l.hidden(), k = l.spatial_kernel;
                     out.push_back({l.name + ".channel.reduce", Shape(c, h, 1, 1), true, l.group, c});
                     out.push_back({l.name + ".channel.expand", Shape(h, c, 1, 1), true, l.group, h});
                     out.push_back({l.name + ".spatial.weight", Shape(1, 2, k, k), true, l.group, 2 * k * k});
                     out.push_back({l.name + ".spatial.bias", vector_shape(1), true, l.group, 0});
                   },
                   [&](const InvertedResidualLayer& l) {
                     for (const auto& s : l.stages()) detail::conv_bn_params(s, out);
                   },
                   [&](const GlobalPoolLayer&) {},
                   [&](const LinearLayer& l) {
                     out.push_back({l.name + ".weight", Shape(l.in, l.out, 1, 1), true, l.group, l.in});
                     if (l.bias) out.push_back({l.name + ".bias", vector_shape(l.out), true, l.group, 0});
                   },
               },
               layer);
  }
  return out;
}

/// Scalar count of trainable parameters: conv weights and biases, batchnorm
/// scale/shift, attention weights, classifier. Running statistics excluded.
inline std::uint64_t count_params(const NetworkSpec& spec) {
  std::uint64_t total = 0;
  for (const auto& p : parameter_table(spec)) {
    if (p.trainable) total += p.shape.numel();
  }
  return total;
}

// ---------------------------------------------------------------------------
// FLOP accounting
//
// Convention:
//   * one multiply-accumulate = 2 FLOPs;
//   * conv / linear bias add: 1 FLOP per output element;
//   * batchnorm (folded scale and shift): 2 FLOPs per element;
//   * relu, relu6, sigmoid: 1 FLOP per element;
//   * pooling (avg or max, spatial or channel): 1 FLOP per input element;
//   * elementwise add / attention gating multiply: 1 FLOP per element.

struct LayerCost {
  std::string name;
  std::string kind;
  std::uint64_t macs = 0;
  std::uint64_t other_flops = 0;
  Shape output;

  std::uint64_t flops() const { return 2 * macs + other_flops; }
};

namespace detail {

inline LayerCost conv_bn_cost(const ConvBnLayer& l, Shape& cur) {
  if (cur.c() != l.in) {
    throw ShapeError("count_flops: layer " + l.name + " expects " + std::to_string(l.in) + " channels, got " +
                     cur.str());
  }
  const std::size_t pad = l.padding();
  if (cur.h() + 2 * pad < l.kernel || cur.w() + 2 * pad < l.kernel) {
    throw ShapeError("count_flops: input " + cur.str() + " too small for layer " + l.name);
  }
  const std::size_t oh = (cur.h() + 2 * pad - l.kernel) / l.stride + 1;
  const std::size_t ow = (cur.w() + 2 * pad - l.kernel) / l.stride + 1;
  const Shape out(cur.n(), l.out, oh, ow);
  LayerCost c;
  c.name = l.name;
  c.kind = l.groups == l.in && l.groups > 1 ? "depthwise" : (l.kernel == 1 ? "pointwise" : "conv");
  const std::uint64_t elems = out.numel();
  c.macs = elems * (l.in / l.groups) * l.kernel * l.kernel;
  if (l.bias) c.other_flops += elems;
  if (l.batchnorm) c.other_flops += 2 * elems;
  if (l.act != Activation::None) c.other_flops += elems;
  c.output = out;
  cur = out;
  return c;
}

}  // namespace detail

/// Per-layer costs; inverted residual blocks contribute one entry per stage
/// plus one for the shortcut add.
inline std::vector<LayerCost> flop_breakdown(const NetworkSpec& spec, Shape input) {
  if (input.numel() == 0) throw std::invalid_argument("count_flops: zero dimension in input " + input.str());
  if (input.c() != spec.input_channels) {
    throw ShapeError("count_flops: input " + input.str() + " does not have " + std::to_string(spec.input_channels) +
                     " channels");
  }
  std::vector<LayerCost> costs;
  Shape cur = input;
  for (const Layer& layer : spec.layers) {
    std::visit(detail::overloaded{
                   [&](const ConvBnLayer& l) { costs.push_back(detail::conv_bn_cost(l, cur)); },
                   [&](const CbamLayer& l) {
                     const std::uint64_t chw = cur.numel();
                     const std::uint64_t hw = cur.n() * cur.plane();
                     const std::uint64_t nc = cur.n() * l.channels;
                     const std::uint64_t nh = cur.n() * l.hidden();
                     LayerCost ch{l.name + ".channel", "channel_attention", 0, 0, cur};
                     ch.other_flops += 2 * chw;                        // avg + max pooling
                     ch.macs = 2 * cur.n() * 2 * l.channels * l.hidden(); // two descriptors, two layers
                     ch.other_flops += 2 * nh;                         // hidden relu per descriptor
                     ch.other_flops += nc;                             // descriptor sum
                     ch.other_flops += nc;                             // sigmoid
                     ch.other_flops += chw;                            // gating multiply
                     LayerCost sp{l.name + ".spatial", "spatial_attention", 0, 0, cur};
                     sp.other_flops += 2 * chw;                        // channel avg + max
                     sp.macs = hw * 2 * l.spatial_kernel * l.spatial_kernel;
                     sp.other_flops += hw;                             // bias
                     sp.other_flops += hw;                             // sigmoid
                     sp.other_flops += chw;                            // gating multiply
                     costs.push_back(ch);
                     costs.push_back(sp);
                   },
                   [&](const InvertedResidualLayer& l) {
                     for (const auto& s : l.stages()) costs.push_back(detail::conv_bn_cost(s, cur));
                     if (l.config.has_shortcut()) {
                       costs.push_back({l.name + ".residual", "add", 0, cur.numel(), cur});
                     }
                   },
                   [&](const GlobalPoolLayer& l) {
                     LayerCost c{l.name, "global_avg_pool", 0, cur.numel(), Shape(cur.n(), cur.c(), 1, 1)};
                     cur = c.output;
                     costs.push_back(c);
                   },
                   [&](const LinearLayer& l) {
                     if (cur.c() * cur.plane() != l.in) {
                       throw ShapeError("count_flops: linear " + l.name + " expects " + std::to_string(l.in) +
                                        " features, got " + cur.str());
                     }
                     LayerCost c{l.name, "linear", cur.n() * l.in * l.out, l.bias ? cur.n() * l.out : 0,
                                 Shape(cur.n(), l.out, 1, 1)};
                     cur = c.output;
                     costs.push_back(c);
                   },
               },
               layer);
  }
  return costs;
}

inline std::uint64_t count_flops(const NetworkSpec& spec, Shape input) {
  std::uint64_t total = 0;
  for (const auto& c : flop_breakdown(spec, input)) total += c.flops();
  return total;
}

inline std::uint64_t count_flops(const NetworkSpec& spec) { return count_flops(spec, spec.input_shape()); }

/// Cost of a depthwise + pointwise pair relative to a standard convolution
/// with the same kernel: (Df^2 Dk^2 I + Df^2 I O) / (Df^2 Dk^2 I O).
inline double separable_ratio(std::size_t df, std::size_t dk, std::size_t in, std::size_t out) {
  if (df == 0 || dk == 0 || in == 0 || out == 0) {
    throw std::invalid_argument("separable_ratio: dimensions must be positive");
  }
  const double f2 = static_cast<double>(df) * static_cast<double>(df);
  const double k2 = static_cast<double>(dk) * static_cast<double>(dk);
  const double i = static_cast<double>(in), o = static_cast<double>(out);
  return (f2 * k2 * i + f2 * i * o) / (f2 * k2 * i * o);
}

}  // namespace lostnet

#pragma once

// Convolutional block attention: a channel gate computed from pooled
// descriptors through a shared bias-free MLP, then a spatial gate computed
// from channel-pooled maps through a single k x k convolution.

#include "lostnet/ops.hpp"

namespace lostnet {

template <typename T>
struct ChannelAttentionParams {
  Tensor<T> reduce;  // W0: (C, C/r, 1, 1)
  Tensor<T> expand;  // W1: (C/r, C, 1, 1)
  std::size_t reduction = 16;

  std::size_t channels() const { return reduce.shape().n(); }
};

template <typename T>
struct SpatialAttentionParams {
  ConvParams<T> conv;  // 2 -> 1 channels, k x k, padding (k - 1) / 2
};

namespace detail {

template <typename T>
void check_channel_params(const Shape& f, const ChannelAttentionParams<T>& p) {
  const std::size_t c = p.reduce.shape().n();
  const std::size_t h = p.reduce.shape().c();
  if (p.reduction == 0 || c % p.reduction != 0 || h != c / p.reduction || p.expand.shape() != Shape(h, c, 1, 1)) {
    throw ShapeError("channel_attention: inconsistent weights " + p.reduce.shape().str() + " / " +
                     p.expand.shape().str() + " for reduction " + std::to_string(p.reduction));
  }
  if (f.c() != c) {
    throw ShapeError("channel_attention: feature " + f.str() + " does not have " + std::to_string(c) + " channels");
  }
}

template <typename T>
void check_spatial_params(const SpatialAttentionParams<T>& p) {
  const Shape& w = p.conv.weights.shape();
  if (w.n() != 1 || w.c() != 2 || w.h() != w.w() || w.h() % 2 == 0 || p.conv.padding != (w.h() - 1) / 2 ||
      p.conv.stride != 1 || p.conv.groups != 1) {
    throw ShapeError("spatial_attention: expected a 1x2xkxk odd kernel with same-padding, got " + w.str());
  }
}

template <typename T>
Tensor<T> shared_mlp(const Tensor<T>& descriptor, const ChannelAttentionParams<T>& p) {
  return linear(relu(linear(descriptor, p.reduce, {})), p.expand, {});
}

}  // namespace detail

/// Channel gate, shape (N, C, 1, 1), values in (0, 1).
template <typename T>
Tensor<T> channel_attention(const Tensor<T>& feature, const ChannelAttentionParams<T>& p) {
  detail::check_channel_params(feature.shape(), p);
  const Tensor<T> a = detail::shared_mlp(global_avg_pool(feature), p);
  const Tensor<T> m = detail::shared_mlp(global_max_pool(feature), p);
  return sigmoid(add(a, m));
}

/// Spatial gate, shape (N, 1, H, W), values in (0, 1).
template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& feature, const SpatialAttentionParams<T>& p) {
  detail::check_spatial_params(p);
  const Tensor<T> pooled = concat_channels(channel_avg(feature), channel_max(feature));
  return sigmoid(conv2d(pooled, p.conv));
}

/// F' = Mc(F) * F, then F'' = Ms(F') * F'.
template <typename T>
Tensor<T> cbam_apply(const Tensor<T>& feature, const ChannelAttentionParams<T>& ch,
                     const SpatialAttentionParams<T>& sp) {
  const Tensor<T> refined = mul_broadcast(feature, channel_attention(feature, ch));
  return mul_broadcast(refined, spatial_attention(refined, sp));
}

}  // namespace lostnet

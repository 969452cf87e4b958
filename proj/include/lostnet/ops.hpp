#pragma once

// Forward and gradient kernels for the operations the network uses.
// Every function here is pure: outputs depend only on the arguments, and the
// only mutation is training-mode batchnorm updating the running statistics it
// was handed.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "lostnet/tensor.hpp"

namespace lostnet {

template <typename T>
struct ConvParams {
  Tensor<T> weights;            // (out, in / groups, kh, kw)
  std::optional<std::vector<T>> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  std::vector<T> bias;
};

namespace detail {

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Valid output-coordinate range [lo, hi) for a kernel tap `k` so that
// o * stride + k - pad lands inside [0, in).
inline void tap_range(std::size_t out, std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                      std::size_t& lo, std::size_t& hi) {
  const auto ipad = static_cast<std::ptrdiff_t>(pad);
  const auto ik = static_cast<std::ptrdiff_t>(k);
  const auto is = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t first = 0;
  if (ik < ipad) first = (ipad - ik + is - 1) / is;
  std::ptrdiff_t last = (static_cast<std::ptrdiff_t>(in) - 1 + ipad - ik);
  if (last < 0) {
    lo = hi = 0;
    return;
  }
  last = last / is + 1;
  lo = static_cast<std::size_t>(std::min<std::ptrdiff_t>(first, static_cast<std::ptrdiff_t>(out)));
  hi = static_cast<std::size_t>(std::min<std::ptrdiff_t>(last, static_cast<std::ptrdiff_t>(out)));
  if (hi < lo) hi = lo;
}

inline void check_conv_shapes(const Shape& x, const Shape& w, std::size_t bias_len, bool has_bias,
                              std::size_t stride, std::size_t pad, std::size_t groups) {
  auto fail = [&](const std::string& why) {
    throw ShapeError("conv2d: " + why + "; input " + x.str() + ", weights " + w.str());
  };
  if (groups == 0 || stride == 0) fail("stride and groups must be positive");
  if (x.c() % groups != 0 || w.n() % groups != 0) fail("groups must divide input and output channels");
  if (w.c() * groups != x.c()) fail("input channels incompatible with weights");
  if (has_bias && bias_len != w.n()) fail("bias length " + std::to_string(bias_len) + " != out channels");
  if (x.h() + 2 * pad < w.h() || x.w() + 2 * pad < w.w()) fail("kernel larger than padded input");
}

// Copies (N, C, P) planes into a (C, N*P) matrix so one 1x1 convolution over
// the whole batch is a single row-major GEMM with long inner loops.
template <typename T>
std::vector<T> pack_channels(const Tensor<T>& x) {
  const std::size_t n = x.shape().n(), c = x.shape().c(), p = x.shape().plane(), j = n * p;
  std::vector<T> out(c * j);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) std::copy_n(x.plane(i, ch), p, out.data() + ch * j + i * p);
  }
  return out;
}

template <typename T>
void unpack_channels(const std::vector<T>& packed, Tensor<T>& x) {
  const std::size_t n = x.shape().n(), c = x.shape().c(), p = x.shape().plane(), j = n * p;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) std::copy_n(packed.data() + ch * j + i * p, p, x.plane(i, ch));
  }
}

// y[oc] = b[oc] + sum_ic w[oc, ic] x[ic], accumulated in ascending ic like
// the generic kernel, four output rows per pass over x.
template <typename T>
void pointwise_gemm(const T* w, const T* x, std::span<const T> bias, T* y, std::size_t cout, std::size_t cin,
                    std::size_t j) {
  std::size_t oc = 0;
  for (; oc + 4 <= cout; oc += 4) {
    T* r0 = y + oc * j;
    T* r1 = r0 + j;
    T* r2 = r1 + j;
    T* r3 = r2 + j;
    std::fill_n(r0, j, bias.empty() ? T(0) : bias[oc]);
    std::fill_n(r1, j, bias.empty() ? T(0) : bias[oc + 1]);
    std::fill_n(r2, j, bias.empty() ? T(0) : bias[oc + 2]);
    std::fill_n(r3, j, bias.empty() ? T(0) : bias[oc + 3]);
    for (std::size_t ic = 0; ic < cin; ++ic) {
      const T a0 = w[oc * cin + ic], a1 = w[(oc + 1) * cin + ic], a2 = w[(oc + 2) * cin + ic],
              a3 = w[(oc + 3) * cin + ic];
      const T* xr = x + ic * j;
      for (std::size_t k = 0; k < j; ++k) {
        const T v = xr[k];
        r0[k] += a0 * v;
        r1[k] += a1 * v;
        r2[k] += a2 * v;
        r3[k] += a3 * v;
      }
    }
  }
  for (; oc < cout; ++oc) {
    T* r = y + oc * j;
    std::fill_n(r, j, bias.empty() ? T(0) : bias[oc]);
    for (std::size_t ic = 0; ic < cin; ++ic) {
      const T a = w[oc * cin + ic];
      const T* xr = x + ic * j;
      for (std::size_t k = 0; k < j; ++k) r[k] += a * xr[k];
    }
  }
}

}  // namespace detail

/// Grouped 2-D convolution with symmetric zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::span<const T> bias, std::size_t stride,
                 std::size_t pad, std::size_t groups) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  detail::check_conv_shapes(xs, ws, bias.size(), !bias.empty(), stride, pad, groups);
  const std::size_t oh = detail::conv_out_extent(xs.h(), ws.h(), stride, pad);
  const std::size_t ow = detail::conv_out_extent(xs.w(), ws.w(), stride, pad);
  const std::size_t cout = ws.n(), cin_g = ws.c(), cout_g = cout / groups;
  const std::size_t kh = ws.h(), kw = ws.w();
  Tensor<T> y(Shape(xs.n(), cout, oh, ow));

  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;
  if (pointwise && groups == 1) {
    const std::size_t j = xs.n() * oh * ow;
    if (xs.n() == 1) {
      detail::pointwise_gemm(w.data(), x.data(), bias, y.data(), cout, cin_g, j);
    } else {
      const auto xp = detail::pack_channels(x);
      std::vector<T> yp(cout * j);
      detail::pointwise_gemm(w.data(), xp.data(), bias, yp.data(), cout, cin_g, j);
      detail::unpack_channels(yp, y);
    }
    return y;
  }
  for (std::size_t n = 0; n < xs.n(); ++n) {
    for (std::size_t oc = 0; oc < cout; ++oc) {
      const std::size_t g = oc / cout_g;
      T* out = y.plane(n, oc);
      const T b = bias.empty() ? T(0) : bias[oc];
      std::fill(out, out + oh * ow, b);
      for (std::size_t icg = 0; icg < cin_g; ++icg) {
        const T* in = x.plane(n, g * cin_g + icg);
        const T* wk = w.data() + (oc * cin_g + icg) * kh * kw;
        if (pointwise) {
          const T a = wk[0];
          const std::size_t p = oh * ow;
          for (std::size_t i = 0; i < p; ++i) out[i] += a * in[i];
          continue;
        }
        for (std::size_t ky = 0; ky < kh; ++ky) {
          std::size_t ylo, yhi;
          detail::tap_range(oh, xs.h(), ky, stride, pad, ylo, yhi);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            std::size_t xlo, xhi;
            detail::tap_range(ow, xs.w(), kx, stride, pad, xlo, xhi);
            const T a = wk[ky * kw + kx];
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
              const T* row = in + (oy * stride + ky - pad) * xs.w();
              T* orow = out + oy * ow;
              if (stride == 1) {
                const T* src = row + (xlo + kx - pad);
                for (std::size_t ox = xlo; ox < xhi; ++ox) orow[ox] += a * src[ox - xlo];
              } else {
                for (std::size_t ox = xlo; ox < xhi; ++ox) orow[ox] += a * row[ox * stride + kx - pad];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
  std::span<const T> bias;
  if (p.bias) bias = *p.bias;
  if (p.bias && p.bias->empty()) {
    throw ShapeError("conv2d: empty bias vector for weights " + p.weights.shape().str());
  }
  return conv2d(x, p.weights, bias, p.stride, p.padding, p.groups);
}

/// One k x k kernel per channel. Routed through the grouped kernel.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
  const Shape& ws = p.weights.shape();
  if (p.groups != x.shape().c() || ws.n() != x.shape().c() || ws.c() != 1) {
    throw ShapeError("depthwise_conv2d: params are not depthwise (groups " + std::to_string(p.groups) +
                     "); input " + x.shape().str() + ", weights " + ws.str());
  }
  return conv2d(x, p);
}

template <typename T>
Tensor<T> pointwise_conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
  const Shape& ws = p.weights.shape();
  if (ws.h() != 1 || ws.w() != 1) {
    throw ShapeError("pointwise_conv2d: kernel is not 1x1; weights " + ws.str());
  }
  return conv2d(x, p);
}

/// Gradients of conv2d. Pass need_* = false to skip a component (it is left empty).
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, std::size_t stride,
                             std::size_t pad, std::size_t groups, bool need_input = true,
                             bool need_weights = true, bool need_bias = true) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const std::size_t oh = detail::conv_out_extent(xs.h(), ws.h(), stride, pad);
  const std::size_t ow = detail::conv_out_extent(xs.w(), ws.w(), stride, pad);
  require_same_shape(gy.shape(), Shape(xs.n(), ws.n(), oh, ow), "conv2d_backward upstream");
  const std::size_t cout = ws.n(), cin_g = ws.c(), cout_g = cout / groups;
  const std::size_t kh = ws.h(), kw = ws.w();
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;

  ConvGrads<T> g;
  if (need_input) g.input = Tensor<T>(xs);
  if (need_weights) g.weights = Tensor<T>(ws);
  if (need_bias) g.bias.assign(cout, T(0));

  if (pointwise && groups == 1) {
    const std::size_t cin = cin_g, j = xs.n() * oh * ow;
    const auto gp = detail::pack_channels(gy);
    if (need_bias) {
      for (std::size_t oc = 0; oc < cout; ++oc) {
        const T* r = gp.data() + oc * j;
        g.bias[oc] = std::accumulate(r, r + j, T(0));
      }
    }
    if (need_input) {
      std::vector<T> wt(cin * cout);
      for (std::size_t oc = 0; oc < cout; ++oc) {
        for (std::size_t ic = 0; ic < cin; ++ic) wt[ic * cout + oc] = w[oc * cin + ic];
      }
      std::vector<T> gin(cin * j);
      detail::pointwise_gemm(wt.data(), gp.data(), {}, gin.data(), cin, cout, j);
      detail::unpack_channels(gin, g.input);
    }
    if (need_weights) {
      // Rows of x^T are contiguous in ic, so each update is an axpy across a weight row.
      const auto xp = detail::pack_channels(x);
      std::vector<T> xt(j * cin);
      for (std::size_t ic = 0; ic < cin; ++ic) {
        for (std::size_t k = 0; k < j; ++k) xt[k * cin + ic] = xp[ic * j + k];
      }
      for (std::size_t oc = 0; oc < cout; ++oc) {
        T* gw = g.weights.data() + oc * cin;
        const T* go = gp.data() + oc * j;
        for (std::size_t k = 0; k < j; ++k) {
          const T a = go[k];
          const T* xr = xt.data() + k * cin;
          for (std::size_t ic = 0; ic < cin; ++ic) gw[ic] += a * xr[ic];
        }
      }
    }
    return g;
  }

  for (std::size_t n = 0; n < xs.n(); ++n) {
    for (std::size_t oc = 0; oc < cout; ++oc) {
      const std::size_t grp = oc / cout_g;
      const T* go = gy.plane(n, oc);
      if (need_bias) {
        T s = 0;
        for (std::size_t i = 0; i < oh * ow; ++i) s += go[i];
        g.bias[oc] += s;
      }
      for (std::size_t icg = 0; icg < cin_g; ++icg) {
        const std::size_t ic = grp * cin_g + icg;
        const T* in = x.plane(n, ic);
        const T* wk = w.data() + (oc * cin_g + icg) * kh * kw;
        T* gin = need_input ? g.input.plane(n, ic) : nullptr;
        T* gwk = need_weights ? g.weights.data() + (oc * cin_g + icg) * kh * kw : nullptr;
        if (pointwise) {
          const std::size_t p = oh * ow;
          if (gin) {
            const T a = wk[0];
            for (std::size_t i = 0; i < p; ++i) gin[i] += a * go[i];
          }
          if (gwk) {
            T s = 0;
            for (std::size_t i = 0; i < p; ++i) s += go[i] * in[i];
            gwk[0] += s;
          }
          continue;
        }
        for (std::size_t ky = 0; ky < kh; ++ky) {
          std::size_t ylo, yhi;
          detail::tap_range(oh, xs.h(), ky, stride, pad, ylo, yhi);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            std::size_t xlo, xhi;
            detail::tap_range(ow, xs.w(), kx, stride, pad, xlo, xhi);
            const T a = wk[ky * kw + kx];
            T s = 0;
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
              const std::size_t base = (oy * stride + ky - pad) * xs.w();
              const T* grow = go + oy * ow;
              const T* row = in + base;
              if (gin) {
                T* girow = gin + base;
                for (std::size_t ox = xlo; ox < xhi; ++ox) girow[ox * stride + kx - pad] += a * grow[ox];
              }
              if (gwk) {
                for (std::size_t ox = xlo; ox < xhi; ++ox) s += grow[ox] * row[ox * stride + kx - pad];
              }
            }
            if (gwk) gwk[ky * kw + kx] += s;
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Tensor<T> relu6(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.values()) v = std::min(std::max(v, T(0)), T(6));
  return y;
}

template <typename T>
Tensor<T> relu6_backward(const Tensor<T>& x, const Tensor<T>& gy) {
  require_same_shape(x.shape(), gy.shape(), "relu6_backward");
  Tensor<T> gx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = (x[i] > T(0) && x[i] < T(6)) ? gy[i] : T(0);
  return gx;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.values()) v = std::max(v, T(0));
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& gy) {
  require_same_shape(x.shape(), gy.shape(), "relu_backward");
  Tensor<T> gx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T(0) ? gy[i] : T(0);
  return gx;
}

template <typename T>
T sigmoid_scalar(T v) {
  // Split by sign so exp never overflows.
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.values()) v = sigmoid_scalar(v);
  return y;
}

/// Takes the forward *output*.
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& gy) {
  require_same_shape(y.shape(), gy.shape(), "sigmoid_backward");
  Tensor<T> gx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) gx[i] = gy[i] * y[i] * (T(1) - y[i]);
  return gx;
}

namespace detail {

// Iterates the 1-D fibres of `s` along `axis`; calls f(base offset, stride, length).
template <typename F>
void for_each_fibre(const Shape& s, std::size_t axis, F&& f) {
  std::size_t stride = 1;
  for (std::size_t a = axis + 1; a < 4; ++a) stride *= s[a];
  const std::size_t len = s[axis];
  std::size_t outer = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < stride; ++i) f(o * len * stride + i, stride, len);
  }
}

}  // namespace detail

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis = 1) {
  if (axis > 3) throw ShapeError("softmax: axis out of range for " + x.shape().str());
  Tensor<T> y(x.shape());
  detail::for_each_fibre(x.shape(), axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
    if (len == 0) return;
    T mx = x[base];
    for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, x[base + k * stride]);
    T sum = 0;
    for (std::size_t k = 0; k < len; ++k) {
      const T e = std::exp(x[base + k * stride] - mx);
      y[base + k * stride] = e;
      sum += e;
    }
    for (std::size_t k = 0; k < len; ++k) y[base + k * stride] /= sum;
  });
  return y;
}

/// Takes the forward *output*.
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& gy, std::size_t axis = 1) {
  require_same_shape(y.shape(), gy.shape(), "softmax_backward");
  Tensor<T> gx(y.shape());
  detail::for_each_fibre(y.shape(), axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
    T dot = 0;
    for (std::size_t k = 0; k < len; ++k) dot += gy[base + k * stride] * y[base + k * stride];
    for (std::size_t k = 0; k < len; ++k) {
      const std::size_t i = base + k * stride;
      gx[i] = y[i] * (gy[i] - dot);
    }
  });
  return gx;
}

/// Gradient of mean softmax cross-entropy with respect to the logits, given
/// the softmax probabilities (N, K, 1, 1).
template <typename T>
Tensor<T> softmax_cross_entropy_backward(const Tensor<T>& probs, std::span<const std::size_t> labels) {
  const Shape& s = probs.shape();
  if (labels.size() != s.n()) {
    throw ShapeError("softmax_cross_entropy_backward: " + std::to_string(labels.size()) +
                     " labels for probabilities " + s.str());
  }
  const std::size_t k = s.c() * s.h() * s.w();
  Tensor<T> g = probs;
  const T inv_n = T(1) / static_cast<T>(s.n());
  for (std::size_t n = 0; n < s.n(); ++n) {
    if (labels[n] >= k) throw std::out_of_range("label " + std::to_string(labels[n]) + " out of range");
    g[n * k + labels[n]] -= T(1);
    for (std::size_t c = 0; c < k; ++c) g[n * k + c] *= inv_n;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization

enum class BatchNormMode { Inference, Training };

struct BatchNormConfig {
  double eps = 1e-5;
  double momentum = 0.1;
};

template <typename T>
struct BatchNormResult {
  Tensor<T> output;
  std::vector<T> mean;     // statistics actually used for normalization
  std::vector<T> inv_std;
};

/// Per-channel normalization. Training mode normalizes with batch statistics
/// and folds them into running_mean / running_var (unbiased variance).
template <typename T>
BatchNormResult<T> batchnorm(const Tensor<T>& x, std::span<const T> scale, std::span<const T> shift,
                             std::span<T> running_mean, std::span<T> running_var, BatchNormMode mode,
                             BatchNormConfig cfg = {}) {
  const Shape& s = x.shape();
  const std::size_t c = s.c();
  if (scale.size() != c || shift.size() != c || running_mean.size() != c || running_var.size() != c) {
    throw ShapeError("batchnorm: parameter length mismatch for input " + x.shape().str() + " (scale " +
                     std::to_string(scale.size()) + ", shift " + std::to_string(shift.size()) + ", mean " +
                     std::to_string(running_mean.size()) + ", var " + std::to_string(running_var.size()) + ")");
  }
  BatchNormResult<T> r;
  r.output = Tensor<T>(s);
  r.mean.resize(c);
  r.inv_std.resize(c);
  const std::size_t m = s.n() * s.plane();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0, var = 0;
    if (mode == BatchNormMode::Training) {
      if (m == 0) throw ShapeError("batchnorm: empty batch " + s.str());
      for (std::size_t n = 0; n < s.n(); ++n) {
        const T* p = x.plane(n, ch);
        for (std::size_t i = 0; i < s.plane(); ++i) mean += p[i];
      }
      mean /= static_cast<double>(m);
      for (std::size_t n = 0; n < s.n(); ++n) {
        const T* p = x.plane(n, ch);
        for (std::size_t i = 0; i < s.plane(); ++i) {
          const double d = p[i] - mean;
          var += d * d;
        }
      }
      const double biased = var / static_cast<double>(m);
      const double unbiased = m > 1 ? var / static_cast<double>(m - 1) : biased;
      running_mean[ch] = static_cast<T>((1 - cfg.momentum) * running_mean[ch] + cfg.momentum * mean);
      running_var[ch] = static_cast<T>((1 - cfg.momentum) * running_var[ch] + cfg.momentum * unbiased);
      var = biased;
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
      if (var < 0) throw std::invalid_argument("batchnorm: negative running variance");
    }
    const T mu = static_cast<T>(mean);
    const T inv = static_cast<T>(1.0 / std::sqrt(var + cfg.eps));
    r.mean[ch] = mu;
    r.inv_std[ch] = inv;
    const T a = scale[ch] * inv;
    const T b = shift[ch] - a * mu;
    for (std::size_t n = 0; n < s.n(); ++n) {
      const T* p = x.plane(n, ch);
      T* o = r.output.plane(n, ch);
      for (std::size_t i = 0; i < s.plane(); ++i) o[i] = a * p[i] + b;
    }
  }
  return r;
}

/// Inference-mode normalization against read-only running statistics.
template <typename T>
BatchNormResult<T> batchnorm_inference(const Tensor<T>& x, std::span<const T> scale, std::span<const T> shift,
                                       std::span<const T> running_mean, std::span<const T> running_var,
                                       BatchNormConfig cfg = {}) {
  std::vector<T> mean(running_mean.begin(), running_mean.end());
  std::vector<T> var(running_var.begin(), running_var.end());
  return batchnorm(x, scale, shift, std::span<T>(mean), std::span<T>(var), BatchNormMode::Inference, cfg);
}

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  std::vector<T> scale;
  std::vector<T> shift;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& x, std::span<const T> scale, std::span<const T> mean,
                                     std::span<const T> inv_std, const Tensor<T>& gy, BatchNormMode mode) {
  require_same_shape(x.shape(), gy.shape(), "batchnorm_backward");
  const Shape& s = x.shape();
  const std::size_t c = s.c();
  BatchNormGrads<T> g{Tensor<T>(s), std::vector<T>(c, T(0)), std::vector<T>(c, T(0))};
  const double m = static_cast<double>(s.n() * s.plane());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_g = 0, sum_gx = 0;
    for (std::size_t n = 0; n < s.n(); ++n) {
      const T* p = x.plane(n, ch);
      const T* gp = gy.plane(n, ch);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        sum_g += gp[i];
        sum_gx += gp[i] * (p[i] - mean[ch]) * inv_std[ch];
      }
    }
    g.shift[ch] = static_cast<T>(sum_g);
    g.scale[ch] = static_cast<T>(sum_gx);
    const T a = scale[ch] * inv_std[ch];
    for (std::size_t n = 0; n < s.n(); ++n) {
      const T* p = x.plane(n, ch);
      const T* gp = gy.plane(n, ch);
      T* o = g.input.plane(n, ch);
      if (mode == BatchNormMode::Inference) {
        for (std::size_t i = 0; i < s.plane(); ++i) o[i] = a * gp[i];
      } else {
        const T mg = static_cast<T>(sum_g / m);
        const T mgx = static_cast<T>(sum_gx / m);
        for (std::size_t i = 0; i < s.plane(); ++i) {
          const T xhat = (p[i] - mean[ch]) * inv_std[ch];
          o[i] = a * (gp[i] - mg - xhat * mgx);
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.plane() == 0) throw ShapeError("global_avg_pool: empty spatial extent " + s.str());
  Tensor<T> y(Shape(s.n(), s.c(), 1, 1));
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t c = 0; c < s.c(); ++c) {
      const T* p = x.plane(n, c);
      double acc = 0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      y.at(n, c, 0, 0) = static_cast<T>(acc / static_cast<double>(s.plane()));
    }
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& in, const Tensor<T>& gy) {
  require_same_shape(gy.shape(), Shape(in.n(), in.c(), 1, 1), "global_avg_pool_backward");
  Tensor<T> gx(in);
  const T inv = T(1) / static_cast<T>(in.plane());
  for (std::size_t n = 0; n < in.n(); ++n) {
    for (std::size_t c = 0; c < in.c(); ++c) {
      T* p = gx.plane(n, c);
      const T v = gy.at(n, c, 0, 0) * inv;
      std::fill(p, p + in.plane(), v);
    }
  }
  return gx;
}

template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.plane() == 0) throw ShapeError("global_max_pool: empty spatial extent " + s.str());
  Tensor<T> y(Shape(s.n(), s.c(), 1, 1));
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t c = 0; c < s.c(); ++c) {
      const T* p = x.plane(n, c);
      y.at(n, c, 0, 0) = *std::max_element(p, p + s.plane());
    }
  }
  return y;
}

/// Routes each upstream value to the first maximal element.
template <typename T>
Tensor<T> global_max_pool_backward(const Tensor<T>& x, const Tensor<T>& gy) {
  const Shape& s = x.shape();
  require_same_shape(gy.shape(), Shape(s.n(), s.c(), 1, 1), "global_max_pool_backward");
  Tensor<T> gx(s);
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t c = 0; c < s.c(); ++c) {
      const T* p = x.plane(n, c);
      const auto idx = static_cast<std::size_t>(std::max_element(p, p + s.plane()) - p);
      gx.plane(n, c)[idx] = gy.at(n, c, 0, 0);
    }
  }
  return gx;
}

template <typename T>
Tensor<T> channel_avg(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.c() == 0) throw ShapeError("channel_avg: empty channel extent " + s.str());
  Tensor<T> y(Shape(s.n(), 1, s.h(), s.w()));
  std::vector<double> acc(s.plane());
  for (std::size_t n = 0; n < s.n(); ++n) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t c = 0; c < s.c(); ++c) {
      const T* p = x.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) acc[i] += p[i];
    }
    T* o = y.plane(n, 0);
    for (std::size_t i = 0; i < s.plane(); ++i) o[i] = static_cast<T>(acc[i] / static_cast<double>(s.c()));
  }
  return y;
}

template <typename T>
Tensor<T> channel_avg_backward(const Shape& in, const Tensor<T>& gy) {
  require_same_shape(gy.shape(), Shape(in.n(), 1, in.h(), in.w()), "channel_avg_backward");
  Tensor<T> gx(in);
  const T inv = T(1) / static_cast<T>(in.c());
  for (std::size_t n = 0; n < in.n(); ++n) {
    const T* g = gy.plane(n, 0);
    for (std::size_t c = 0; c < in.c(); ++c) {
      T* o = gx.plane(n, c);
      for (std::size_t i = 0; i < in.plane(); ++i) o[i] = g[i] * inv;
    }
  }
  return gx;
}

template <typename T>
Tensor<T> channel_max(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.c() == 0) throw ShapeError("channel_max: empty channel extent " + s.str());
  Tensor<T> y(Shape(s.n(), 1, s.h(), s.w()));
  for (std::size_t n = 0; n < s.n(); ++n) {
    T* o = y.plane(n, 0);
    std::copy(x.plane(n, 0), x.plane(n, 0) + s.plane(), o);
    for (std::size_t c = 1; c < s.c(); ++c) {
      const T* p = x.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) o[i] = std::max(o[i], p[i]);
    }
  }
  return y;
}

template <typename T>
Tensor<T> channel_max_backward(const Tensor<T>& x, const Tensor<T>& gy) {
  const Shape& s = x.shape();
  require_same_shape(gy.shape(), Shape(s.n(), 1, s.h(), s.w()), "channel_max_backward");
  Tensor<T> gx(s);
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < s.c(); ++c) {
        if (x.plane(n, c)[i] > x.plane(n, best)[i]) best = c;
      }
      gx.plane(n, best)[i] = gy.plane(n, 0)[i];
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Linear

/// y[n, o] = sum_i x[n, i] * W[i, o] + b[o]. x is flattened per batch row;
/// W has shape (in, out, 1, 1).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, std::span<const T> bias) {
  const Shape& s = x.shape();
  const std::size_t in = s.c() * s.plane();
  const std::size_t out = w.shape().c();
  if (w.shape().n() != in || w.shape().plane() != 1) {
    throw ShapeError("linear: input " + s.str() + " incompatible with weights " + w.shape().str());
  }
  if (!bias.empty() && bias.size() != out) {
    throw ShapeError("linear: bias length " + std::to_string(bias.size()) + " for weights " + w.shape().str());
  }
  Tensor<T> y(Shape(s.n(), out, 1, 1));
  for (std::size_t n = 0; n < s.n(); ++n) {
    T* o = y.data() + n * out;
    for (std::size_t j = 0; j < out; ++j) o[j] = bias.empty() ? T(0) : bias[j];
    const T* xr = x.data() + n * in;
    for (std::size_t i = 0; i < in; ++i) {
      const T a = xr[i];
      const T* wr = w.data() + i * out;
      for (std::size_t j = 0; j < out; ++j) o[j] += a * wr[j];
    }
  }
  return y;
}

template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weights;
  std::vector<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, bool need_input = true,
                               bool need_weights = true, bool need_bias = true) {
  const Shape& s = x.shape();
  const std::size_t in = s.c() * s.plane();
  const std::size_t out = w.shape().c();
  require_same_shape(gy.shape(), Shape(s.n(), out, 1, 1), "linear_backward upstream");
  LinearGrads<T> g;
  if (need_input) g.input = Tensor<T>(s);
  if (need_weights) g.weights = Tensor<T>(w.shape());
  if (need_bias) g.bias.assign(out, T(0));
  for (std::size_t n = 0; n < s.n(); ++n) {
    const T* go = gy.data() + n * out;
    const T* xr = x.data() + n * in;
    if (need_bias) {
      for (std::size_t j = 0; j < out; ++j) g.bias[j] += go[j];
    }
    for (std::size_t i = 0; i < in; ++i) {
      const T* wr = w.data() + i * out;
      if (need_input) {
        T acc = 0;
        for (std::size_t j = 0; j < out; ++j) acc += wr[j] * go[j];
        g.input[n * in + i] = acc;
      }
      if (need_weights) {
        T* gw = g.weights.data() + i * out;
        const T a = xr[i];
        for (std::size_t j = 0; j < out; ++j) gw[j] += a * go[j];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise helpers

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

namespace detail {

// Broadcasting gate shapes: (N,C,1,1), (N,1,H,W) or identical to x.
inline void check_gate(const Shape& x, const Shape& g, const char* who) {
  const bool channel = g == Shape(x.n(), x.c(), 1, 1);
  const bool spatial = g == Shape(x.n(), 1, x.h(), x.w());
  if (!(channel || spatial || g == x)) {
    throw ShapeError(std::string(who) + ": gate " + g.str() + " does not broadcast over " + x.str());
  }
}

inline std::size_t gate_index(const Shape& g, std::size_t n, std::size_t c, std::size_t i) {
  const std::size_t gc = g.c() == 1 ? 0 : c;
  const std::size_t gi = g.plane() == 1 ? 0 : i;
  return (n * g.c() + gc) * g.plane() + gi;
}

}  // namespace detail

/// x multiplied by a gate broadcast over channels or space.
template <typename T>
Tensor<T> mul_broadcast(const Tensor<T>& x, const Tensor<T>& gate) {
  const Shape& s = x.shape();
  const Shape& gs = gate.shape();
  detail::check_gate(s, gs, "mul_broadcast");
  Tensor<T> y(s);
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t c = 0; c < s.c(); ++c) {
      const T* p = x.plane(n, c);
      T* o = y.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) o[i] = gate[detail::gate_index(gs, n, c, i)] * p[i];
    }
  }
  return y;
}

template <typename T>
struct MulGrads {
  Tensor<T> input;
  Tensor<T> gate;
};

template <typename T>
MulGrads<T> mul_broadcast_backward(const Tensor<T>& x, const Tensor<T>& gate, const Tensor<T>& gy) {
  const Shape& s = x.shape();
  const Shape& gs = gate.shape();
  require_same_shape(gy.shape(), s, "mul_broadcast_backward");
  MulGrads<T> g{Tensor<T>(s), Tensor<T>(gs)};
  for (std::size_t n = 0; n < s.n(); ++n) {
    for (std::size_t c = 0; c < s.c(); ++c) {
      const T* p = x.plane(n, c);
      const T* gp = gy.plane(n, c);
      T* gi = g.input.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const std::size_t k = detail::gate_index(gs, n, c, i);
        gi[i] = gate[k] * gp[i];
        g.gate[k] += p[i] * gp[i];
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n() != sb.n() || sa.h() != sb.h() || sa.w() != sb.w()) {
    throw ShapeError("concat_channels: " + sa.str() + " vs " + sb.str());
  }
  Tensor<T> y(Shape(sa.n(), sa.c() + sb.c(), sa.h(), sa.w()));
  for (std::size_t n = 0; n < sa.n(); ++n) {
    std::copy(a.plane(n, 0), a.plane(n, 0) + sa.c() * sa.plane(), y.plane(n, 0));
    std::copy(b.plane(n, 0), b.plane(n, 0) + sb.c() * sb.plane(), y.plane(n, sa.c()));
  }
  return y;
}

/// Splits a channel-concatenated gradient back into its two operands.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& g, std::size_t first) {
  const Shape& s = g.shape();
  if (first > s.c()) throw ShapeError("split_channels: " + std::to_string(first) + " of " + s.str());
  Tensor<T> a(Shape(s.n(), first, s.h(), s.w()));
  Tensor<T> b(Shape(s.n(), s.c() - first, s.h(), s.w()));
  for (std::size_t n = 0; n < s.n(); ++n) {
    std::copy(g.plane(n, 0), g.plane(n, 0) + first * s.plane(), a.plane(n, 0));
    std::copy(g.plane(n, first), g.plane(n, 0) + s.c() * s.plane(), b.plane(n, 0));
  }
  return {std::move(a), std::move(b)};
}

}  // namespace lostnet

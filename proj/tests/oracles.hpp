#pragma once

// Reference implementations used only by tests. They follow the textbook
// definitions with plain nested loops and share no code with the library
// kernels they check.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "lostnet/tensor.hpp"

namespace oracle {

using lostnet::Shape;
using lostnet::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(s);
  for (auto& v : t.values()) v = static_cast<T>(d(rng));
  return t;
}

template <typename T>
std::vector<T> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return v;
}

/// Direct definition of grouped convolution with zero padding.
template <typename T>
Tensor<T> naive_conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>& bias, std::size_t stride,
                       std::size_t pad, std::size_t groups) {
  const auto N = x.shape().n(), C = x.shape().c(), H = x.shape().h(), W = x.shape().w();
  const auto O = w.shape().n(), CG = w.shape().c(), KH = w.shape().h(), KW = w.shape().w();
  const auto OH = (H + 2 * pad - KH) / stride + 1, OW = (W + 2 * pad - KW) / stride + 1;
  const auto OG = O / groups;
  (void)C;
  Tensor<T> y(Shape(N, O, OH, OW));
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[o];
          const std::size_t g = o / OG;
          for (std::size_t ci = 0; ci < CG; ++ci)
            for (std::size_t ky = 0; ky < KH; ++ky)
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                acc += static_cast<double>(w.at(o, ci, ky, kx)) *
                       static_cast<double>(x.at(n, g * CG + ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)));
              }
          y.at(n, o, oy, ox) = static_cast<T>(acc);
        }
  return y;
}

template <typename T>
Tensor<T> naive_linear(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>& bias) {
  const std::size_t N = x.shape().n(), I = w.shape().n(), O = w.shape().c();
  Tensor<T> y(Shape(N, O, 1, 1));
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o) {
      double acc = bias.empty() ? 0.0 : bias[o];
      for (std::size_t i = 0; i < I; ++i) acc += static_cast<double>(x[n * I + i]) * static_cast<double>(w[i * O + o]);
      y[n * O + o] = static_cast<T>(acc);
    }
  return y;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

/// Central finite-difference gradient of f at x, where f maps x to a scalar.
inline Tensor<double> numeric_gradient(const std::function<double(const Tensor<double>&)>& f, Tensor<double> x,
                                       double h = 1e-5) {
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||), with 0 when both vanish.
inline double relative_error(const Tensor<double>& a, const Tensor<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max(std::sqrt(na), std::sqrt(nb));
  if (denom < 1e-12) return std::sqrt(diff);
  return std::sqrt(diff) / denom;
}

/// Layer-by-layer parameter count of MobileNetV2 with one CBAM after the stem,
/// written out from the architecture table rather than from NetworkSpec.
/// Convs carry no bias; each batchnorm adds scale and shift.
inline std::uint64_t analytic_param_count(std::uint64_t classes, std::uint64_t r, std::uint64_t k) {
  struct Row { std::uint64_t t, c, n, s; };
  const Row rows[] = {{1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2},
                      {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1}};
  auto conv_bn = [](std::uint64_t in_per_group, std::uint64_t out, std::uint64_t kk) {
    return kk * kk * in_per_group * out + 2 * out;
  };
  std::uint64_t total = conv_bn(3, 32, 3);     // stem
  total += 32 * (32 / r) * 2;                  // CBAM shared MLP, W0 and W1
  total += 2 * k * k + 1;                      // CBAM spatial conv with bias
  std::uint64_t in = 32;
  for (const Row& row : rows) {
    for (std::uint64_t i = 0; i < row.n; ++i) {
      const std::uint64_t hid = in * row.t;
      if (row.t != 1) total += conv_bn(in, hid, 1);
      total += conv_bn(1, hid, 3);
      total += conv_bn(hid, row.c, 1);
      in = row.c;
    }
  }
  total += conv_bn(320, 1280, 1);              // head
  total += 1280 * classes + classes;           // classifier
  return total;
}

inline double weighted_sum(const Tensor<double>& y, const Tensor<double>& r) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

/// Area average by replicating every source pixel onto the least common
/// multiple grid and then taking plain block means.
inline std::vector<double> area_average_lcm(const std::vector<double>& src, std::size_t w, std::size_t h,
                                            std::size_t ow, std::size_t oh) {
  const std::size_t lw = std::lcm(w, ow), lh = std::lcm(h, oh);
  const std::size_t rx = lw / w, ry = lh / h, bx = lw / ow, by = lh / oh;
  std::vector<double> out(ow * oh, 0.0);
  for (std::size_t y = 0; y < lh; ++y)
    for (std::size_t x = 0; x < lw; ++x) out[(y / by) * ow + x / bx] += src[(y / ry) * w + x / rx];
  for (auto& v : out) v /= static_cast<double>(bx * by);
  return out;
}

/// Orthonormal 2-D DCT-II by the direct double sum, O(N^4).
inline std::vector<double> naive_dct2d(const std::vector<double>& g, std::size_t n) {
  const double pi = 3.14159265358979323846;
  std::vector<double> out(n * n);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t u = 0; u < n; ++u) {
      double s = 0;
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
          s += g[y * n + x] * std::cos(pi * (2.0 * x + 1) * u / (2.0 * n)) * std::cos(pi * (2.0 * y + 1) * v / (2.0 * n));
      const double au = u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
      const double av = v == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
      out[v * n + u] = au * av * s;
    }
  return out;
}

inline int bit_loop_distance(std::uint64_t a, std::uint64_t b) {
  int d = 0;
  for (int i = 0; i < 64; ++i) d += ((a >> i) & 1u) != ((b >> i) & 1u);
  return d;
}

}  // namespace oracle

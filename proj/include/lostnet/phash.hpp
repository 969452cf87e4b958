#pragma once

// 64-bit DCT perceptual hash and Hamming-distance ranking.
//
// Pipeline: BT.601 luminance -> exact area-average downscale to 32x32 ->
// orthonormal 2-D DCT-II -> low-frequency 8x8 block (rows and columns 0..7)
// -> threshold = mean of the block -> bit set iff value > threshold.
// Bits are taken row-major from the block, first coefficient in the MSB.
//
// The threshold averages the 63 AC coefficients by default. Averaging all 64
// lets the DC term dominate: independent noise images then share almost
// every bit (mean distance about 11 at 32x32 and 0 at 300x300).

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lostnet/image.hpp"

namespace lostnet {

inline constexpr std::size_t kHashSide = 32;
inline constexpr std::size_t kHashBlock = 8;

struct GrayImage {
  std::size_t width = 0, height = 0;
  std::vector<double> values;  // row-major, in [0, 1]

  double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
};

struct PerceptualHash {
  std::uint64_t bits = 0;

  std::string hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (std::size_t i = 0; i < 16; ++i) s[15 - i] = digits[(bits >> (4 * i)) & 0xF];
    return s;
  }

  /// Accepts exactly 16 hex digits (either case).
  static std::optional<PerceptualHash> from_hex(std::string_view s) {
    if (s.size() != 16) return std::nullopt;
    std::uint64_t v = 0;
    for (char c : s) {
      int d;
      if (c >= '0' && c <= '9') {
        d = c - '0';
      } else if (c >= 'a' && c <= 'f') {
        d = c - 'a' + 10;
      } else if (c >= 'A' && c <= 'F') {
        d = c - 'A' + 10;
      } else {
        return std::nullopt;
      }
      v = (v << 4) | static_cast<std::uint64_t>(d);
    }
    return PerceptualHash{v};
  }

  friend bool operator==(const PerceptualHash&, const PerceptualHash&) = default;
};

inline int hamming(PerceptualHash a, PerceptualHash b) { return std::popcount(a.bits ^ b.bits); }

inline GrayImage luminance(const Image& img) {
  GrayImage g{img.width, img.height, std::vector<double>(img.width * img.height)};
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    const std::uint8_t* p = img.rgb.data() + 3 * i;
    g.values[i] = (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
  }
  return g;
}

/// Exact box filter: each output pixel is the area-weighted mean of the
/// source region it covers, including fractional edge pixels.
inline GrayImage area_downscale(const GrayImage& src, std::size_t w, std::size_t h) {
  if (src.width == 0 || src.height == 0 || w == 0 || h == 0) throw std::invalid_argument("area_downscale: empty image");
  // Per-axis weights: weight[o][i] = overlap of source cell i with output cell o, in source units.
  auto axis = [](std::size_t n_in, std::size_t n_out) {
    std::vector<std::vector<std::pair<std::size_t, double>>> wts(n_out);
    const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
      const double lo = static_cast<double>(o) * scale, hi = static_cast<double>(o + 1) * scale;
      for (auto i = static_cast<std::size_t>(std::floor(lo)); i < n_in && static_cast<double>(i) < hi; ++i) {
        const double overlap = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
        if (overlap > 0) wts[o].emplace_back(i, overlap / scale);
      }
    }
    return wts;
  };
  const auto wx = axis(src.width, w), wy = axis(src.height, h);
  GrayImage out{w, h, std::vector<double>(w * h)};
  for (std::size_t oy = 0; oy < h; ++oy) {
    for (std::size_t ox = 0; ox < w; ++ox) {
      double acc = 0;
      for (const auto& [iy, ay] : wy[oy]) {
        for (const auto& [ix, ax] : wx[ox]) acc += ay * ax * src.at(ix, iy);
      }
      out.values[oy * w + ox] = acc;
    }
  }
  return out;
}

inline GrayImage phash_preprocess(const Image& img) {
  return area_downscale(luminance(img), kHashSide, kHashSide);
}

namespace detail {

inline const std::array<double, kHashSide * kHashSide>& dct_basis() {
  static const auto basis = [] {
    std::array<double, kHashSide * kHashSide> b{};
    const double n = static_cast<double>(kHashSide);
    for (std::size_t k = 0; k < kHashSide; ++k) {
      const double alpha = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
      for (std::size_t i = 0; i < kHashSide; ++i) {
        b[k * kHashSide + i] = alpha * std::cos(std::numbers::pi * (2.0 * static_cast<double>(i) + 1.0) *
                                                static_cast<double>(k) / (2.0 * n));
      }
    }
    return b;
  }();
  return basis;
}

}  // namespace detail

/// Orthonormal 2-D DCT-II of a 32x32 image; result row-major with (0,0) the DC term.
inline std::vector<double> dct2d(const GrayImage& g) {
  if (g.width != kHashSide || g.height != kHashSide || g.values.size() != kHashSide * kHashSide) {
    throw std::invalid_argument("dct2d: expected 32x32 input, got " + std::to_string(g.width) + "x" +
                                std::to_string(g.height));
  }
  const auto& c = detail::dct_basis();
  constexpr std::size_t N = kHashSide;
  std::vector<double> tmp(N * N, 0.0), out(N * N, 0.0);
  // Rows: tmp[y][u] = sum_x C[u][x] g[y][x]
  for (std::size_t y = 0; y < N; ++y)
    for (std::size_t u = 0; u < N; ++u) {
      double s = 0;
      for (std::size_t x = 0; x < N; ++x) s += c[u * N + x] * g.values[y * N + x];
      tmp[y * N + u] = s;
    }
  // Columns: out[v][u] = sum_y C[v][y] tmp[y][u]
  for (std::size_t v = 0; v < N; ++v)
    for (std::size_t u = 0; u < N; ++u) {
      double s = 0;
      for (std::size_t y = 0; y < N; ++y) s += c[v * N + y] * tmp[y * N + u];
      out[v * N + u] = s;
    }
  return out;
}

enum class HashThreshold { AcMean, BlockMean };

inline PerceptualHash phash_from_gray(const GrayImage& g32, HashThreshold rule = HashThreshold::AcMean) {
  auto coeffs = dct2d(g32);
  // Snap to a 1e-9 grid: transform round-off on flat regions must read as exact zero.
  for (auto& c : coeffs) c = std::round(c * 1e9) / 1e9;
  double mean = 0;
  for (std::size_t v = 0; v < kHashBlock; ++v)
    for (std::size_t u = 0; u < kHashBlock; ++u) mean += coeffs[v * kHashSide + u];
  if (rule == HashThreshold::AcMean) {
    mean = (mean - coeffs[0]) / static_cast<double>(kHashBlock * kHashBlock - 1);
  } else {
    mean /= static_cast<double>(kHashBlock * kHashBlock);
  }
  std::uint64_t bits = 0;
  for (std::size_t v = 0; v < kHashBlock; ++v)
    for (std::size_t u = 0; u < kHashBlock; ++u) bits = (bits << 1) | (coeffs[v * kHashSide + u] > mean ? 1u : 0u);
  return PerceptualHash{bits};
}

inline PerceptualHash phash_compute(const Image& img, HashThreshold rule = HashThreshold::AcMean) {
  return phash_from_gray(phash_preprocess(img), rule);
}

inline PerceptualHash phash_compute(std::span<const std::uint8_t> bytes, HashThreshold rule = HashThreshold::AcMean) {
  return phash_compute(decode_image(bytes), rule);
}

struct RankedMatch {
  std::uint64_t id = 0;
  int distance = 0;
  friend bool operator==(const RankedMatch&, const RankedMatch&) = default;
};

/// Ascending distance, ties by ascending id, at most top_k entries.
inline std::vector<RankedMatch> rank_by_similarity(PerceptualHash query,
                                                   const std::vector<std::pair<std::uint64_t, PerceptualHash>>& cands,
                                                   std::size_t top_k) {
  std::vector<RankedMatch> all;
  all.reserve(cands.size());
  for (const auto& [id, h] : cands) all.push_back({id, hamming(query, h)});
  const auto less = [](const RankedMatch& a, const RankedMatch& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  };
  const std::size_t k = std::min(top_k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), less);
  all.resize(k);
  return all;
}

}  // namespace lostnet

#pragma once

// Procedural image families standing in for photographs of the ten item
// categories. Each family has a distinct structure; color, phase, frequency,
// and position vary per sample.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "lostnet/image.hpp"

namespace lostnet {

inline constexpr std::size_t kSynthFamilies = 10;

namespace detail {

struct Rgb {
  double r, g, b;
};

inline Rgb random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(0.1, 0.9);
  return {d(rng), d(rng), d(rng)};
}

inline Rgb mix(Rgb a, Rgb b, double t) { return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t}; }

}  // namespace detail

/// Sample `index` of `family` (0..9) at size x size pixels, deterministic in (family, index, seed).
inline Image synth_image(std::size_t family, std::uint64_t index, std::uint64_t seed, std::size_t size = 64) {
  if (family >= kSynthFamilies) throw std::invalid_argument("synth_image: family must be < 10");
  if (size == 0) throw std::invalid_argument("synth_image: size must be positive");
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (family + 1)) ^ (0xBF58476D1CE4E5B9ULL * (index + 1)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const detail::Rgb fg = detail::random_color(rng);
  detail::Rgb bg = detail::random_color(rng);
  // Keep foreground and background apart so structure is always visible.
  if (std::abs(fg.r - bg.r) + std::abs(fg.g - bg.g) + std::abs(fg.b - bg.b) < 0.6) {
    bg = {1.0 - fg.r, 1.0 - fg.g, 1.0 - fg.b};
  }
  const double phase = u(rng), freq = 3.0 + 2.0 * u(rng);
  const double cx = 0.35 + 0.3 * u(rng), cy = 0.35 + 0.3 * u(rng), radius = 0.2 + 0.1 * u(rng);
  const double two_pi = 2.0 * std::numbers::pi;
  Image img(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double px = (static_cast<double>(x) + 0.5) / static_cast<double>(size);
      const double py = (static_cast<double>(y) + 0.5) / static_cast<double>(size);
      const double dx = px - cx, dy = py - cy;
      const double r = std::sqrt(dx * dx + dy * dy);
      double t = 0;
      switch (family) {
        case 0: t = std::sin(two_pi * (freq * py + phase)) > 0; break;                     // horizontal stripes
        case 1: t = std::sin(two_pi * (freq * px + phase)) > 0; break;                     // vertical stripes
        case 2: t = std::sin(two_pi * (freq * (px + py) / 1.4 + phase)) > 0; break;        // diagonal stripes
        case 3: t = (std::sin(two_pi * freq * px / 1.5 + phase) > 0) != (std::sin(two_pi * freq * py / 1.5) > 0); break;
        case 4: t = std::sin(two_pi * (2.0 * freq * r + phase)) > 0; break;                // rings
        case 5: t = r < radius; break;                                                     // disk
        case 6: t = std::abs(dx) < 0.08 || std::abs(dy) < 0.08; break;                     // cross
        case 7: t = px; break;                                                             // horizontal ramp
        case 8: t = std::abs(dx) < radius && std::abs(dy) < radius * 0.6; break;           // bar
        case 9: {                                                                          // dot grid
          const double gx = std::fmod(px * freq + phase, 1.0) - 0.5, gy = std::fmod(py * freq + phase, 1.0) - 0.5;
          t = gx * gx + gy * gy < 0.06;
          break;
        }
        default: break;
      }
      const detail::Rgb c = detail::mix(bg, fg, t);
      std::uint8_t* p = img.pixel(x, y);
      p[0] = static_cast<std::uint8_t>(std::lround(255.0 * c.r));
      p[1] = static_cast<std::uint8_t>(std::lround(255.0 * c.g));
      p[2] = static_cast<std::uint8_t>(std::lround(255.0 * c.b));
    }
  }
  return img;
}

/// Independent uniform noise per pixel and channel.
inline Image noise_image(std::uint64_t seed, std::size_t width, std::size_t height) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, 255);
  Image img(width, height);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(d(rng));
  return img;
}

}  // namespace lostnet

#pragma once

// Single-thread inference latency. Timings are machine-dependent; callers
// compare them with each other, never against a fixed threshold.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "lostnet/model.hpp"

namespace lostnet {

struct LatencyReport {
  std::size_t resolution = 0;
  std::size_t iterations = 0;
  double mean_ms = 0, p50_ms = 0, p95_ms = 0;
  std::vector<double> samples_ms;
};

/// Nearest-rank percentile of an unsorted sample, q in (0, 100].
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("percentile: empty sample");
  if (!(q > 0 && q <= 100)) throw std::invalid_argument("percentile: q must be in (0, 100]");
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(v.size())));
  return v[std::max<std::size_t>(rank, 1) - 1];
}

inline LatencyReport summarize_latency(std::size_t resolution, std::vector<double> samples_ms) {
  if (samples_ms.empty()) throw std::invalid_argument("summarize_latency: no samples");
  LatencyReport r;
  r.resolution = resolution;
  r.iterations = samples_ms.size();
  r.mean_ms = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) / static_cast<double>(samples_ms.size());
  r.p50_ms = percentile(samples_ms, 50);
  r.p95_ms = percentile(samples_ms, 95);
  r.samples_ms = std::move(samples_ms);
  return r;
}

/// Times `iterations` batch-1 forward passes of a fixed input after `warmup`
/// untimed ones.
inline LatencyReport bench_inference(const NetworkSpec& spec, const WeightStore<float>& w, std::size_t resolution,
                                     std::size_t iterations, std::size_t warmup = 1) {
  if (iterations == 0) throw std::invalid_argument("bench_inference: iterations must be >= 1");
  Tensor<float> x(Shape(1, 3, resolution, resolution));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>((i * 37) % 101) / 50.0f - 1.0f;
  volatile float sink = 0;
  for (std::size_t i = 0; i < warmup; ++i) sink = sink + infer_logits(spec, w, x)[0];
  std::vector<double> samples;
  samples.reserve(iterations);
  for (std::size_t i = 0; i < iterations; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    sink = sink + infer_logits(spec, w, x)[0];
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  (void)sink;
  return summarize_latency(resolution, std::move(samples));
}

inline std::string format_latency(const LatencyReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "resolution=%zu iterations=%zu mean_ms=%.3f p50_ms=%.3f p95_ms=%.3f", r.resolution,
                r.iterations, r.mean_ms, r.p50_ms, r.p95_ms);
  return buf;
}

}  // namespace lostnet

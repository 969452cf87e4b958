#pragma once

// Dataset manifests ("lostnet-manifest v1" + classes.txt), the seeded
// per-class 70/30 split, in-memory tensor datasets, and the synthetic corpus
// writer.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lostnet/image.hpp"
#include "lostnet/synth.hpp"
#include "lostnet/tensor.hpp"

namespace lostnet {

inline const std::vector<std::string>& default_classes() {
  static const std::vector<std::string> names{"bag",      "book",     "card",     "earphone",     "key",
                                              "lipstick", "Phone",    "umbrella", "USBflashdisk", "vacuumcup"};
  return names;
}

inline constexpr const char* kManifestHeader = "lostnet-manifest v1";

struct ManifestEntry {
  std::string path;  // relative to Manifest::root
  std::size_t label = 0;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<std::string> classes;
  std::vector<ManifestEntry> entries;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void validate_manifest(const Manifest& m) {
  if (m.classes.empty()) throw ManifestError("manifest: empty class list");
  std::set<std::string> seen;
  for (const auto& e : m.entries) {
    if (e.label >= m.classes.size()) {
      throw ManifestError("manifest: class index " + std::to_string(e.label) + " out of range for " + e.path);
    }
    if (!seen.insert(e.path).second) throw ManifestError("manifest: duplicate path " + e.path);
  }
}

inline std::vector<std::string> read_classes(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ManifestError("cannot open class list " + file.string());
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

/// Reads `manifest_file` and the classes.txt beside it. Entry paths are
/// resolved against the manifest's directory.
inline Manifest read_manifest(const std::filesystem::path& manifest_file) {
  std::ifstream in(manifest_file);
  if (!in) throw ManifestError("cannot open manifest " + manifest_file.string());
  Manifest m;
  m.root = manifest_file.parent_path();
  m.classes = read_classes(m.root / "classes.txt");
  std::string line;
  if (!std::getline(in, line) || (line != kManifestHeader && line != std::string(kManifestHeader) + "\r")) {
    throw ManifestError(manifest_file.string() + ": missing '" + kManifestHeader + "' header");
  }
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw ManifestError(manifest_file.string() + ":" + std::to_string(lineno) + ": expected class_index<TAB>path");
    }
    std::size_t label = 0;
    try {
      std::size_t used = 0;
      label = std::stoul(line.substr(0, tab), &used);
      if (used != tab) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ManifestError(manifest_file.string() + ":" + std::to_string(lineno) + ": bad class index");
    }
    m.entries.push_back({line.substr(tab + 1), label});
  }
  validate_manifest(m);
  return m;
}

/// Writes manifest.txt and classes.txt into `dir`.
inline void write_manifest(const Manifest& m, const std::filesystem::path& dir, const std::string& name = "manifest.txt") {
  validate_manifest(m);
  std::filesystem::create_directories(dir);
  std::ofstream c(dir / "classes.txt");
  for (const auto& n : m.classes) c << n << '\n';
  std::ofstream out(dir / name);
  out << kManifestHeader << '\n';
  for (const auto& e : m.entries) out << e.label << '\t' << e.path << '\n';
  if (!out || !c) throw ManifestError("failed writing manifest into " + dir.string());
}

/// Number of training entries for a class of `n` (n >= 2): 70% rounded to
/// nearest (halves up), kept within [1, n - 1].
inline std::size_t train_share(std::size_t n) {
  const std::size_t t = (7 * n + 5) / 10;
  return std::clamp<std::size_t>(t, 1, n - 1);
}

/// Per-class seeded split; both halves keep the manifest's entry order.
inline std::pair<Manifest, Manifest> split_dataset(const Manifest& m, std::uint64_t seed) {
  validate_manifest(m);
  std::vector<std::vector<std::size_t>> by_class(m.classes.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) by_class[m.entries[i].label].push_back(i);
  std::vector<bool> to_train(m.entries.size(), false);
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 2) {
      throw ManifestError("split_dataset: class '" + m.classes[c] + "' has " + std::to_string(idx.size()) +
                          " entries, need at least 2");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t t = train_share(idx.size());
    for (std::size_t j = 0; j < t; ++j) to_train[idx[j]] = true;
  }
  Manifest train{m.root, m.classes, {}}, val{m.root, m.classes, {}};
  for (std::size_t i = 0; i < m.entries.size(); ++i) (to_train[i] ? train : val).entries.push_back(m.entries[i]);
  return {std::move(train), std::move(val)};
}

/// Decoded, preprocessed samples; images are (1, 3, R, R).
struct TensorDataset {
  std::vector<Tensor<float>> images;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  /// Stacks the given samples into one (B, 3, R, R) batch.
  Tensor<float> batch(std::span<const std::size_t> indices) const {
    if (indices.empty()) throw std::invalid_argument("TensorDataset::batch: empty selection");
    const Shape s = images[indices[0]].shape();
    Tensor<float> out(Shape(indices.size(), s.c(), s.h(), s.w()));
    const std::size_t per = s.numel();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto& img = images[indices[i]];
      if (img.shape() != s) throw ShapeError("TensorDataset::batch: mixed sample shapes " + s.str() + " and " + img.shape().str());
      std::copy(img.data(), img.data() + per, out.data() + i * per);
    }
    return out;
  }
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline TensorDataset load_dataset(const Manifest& m, std::size_t resolution, const Normalization& norm = {}) {
  TensorDataset d;
  d.classes = m.classes.size();
  for (const auto& e : m.entries) {
    const auto path = m.root / e.path;
    try {
      d.images.push_back(to_network_input(decode_image(read_file_bytes(path)), resolution, norm));
    } catch (const ImageDecodeError& err) {
      throw ImageDecodeError(path.string() + ": " + err.what());
    }
    d.labels.push_back(e.label);
  }
  return d;
}

/// Writes `per_class` PNGs per family under dir/images/<class>/ with
/// manifest.txt and classes.txt; returns the manifest.
inline Manifest write_synthetic_corpus(const std::filesystem::path& dir, std::size_t per_class, std::uint64_t seed,
                                       std::size_t image_size = 64) {
  Manifest m{dir, default_classes(), {}};
  for (std::size_t c = 0; c < kSynthFamilies; ++c) {
    std::filesystem::create_directories(dir / "images" / m.classes[c]);
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::string rel = "images/" + m.classes[c] + "/" + std::to_string(i) + ".png";
      const auto png = encode_png(synth_image(c, i, seed, image_size));
      std::ofstream out(dir / rel, std::ios::binary);
      out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
      if (!out) throw std::runtime_error("cannot write " + (dir / rel).string());
      m.entries.push_back({rel, c});
    }
  }
  write_manifest(m, dir);
  return m;
}

/// The synthetic corpus held in memory, skipping the PNG round-trip.
inline TensorDataset synthetic_dataset(std::size_t per_class, std::uint64_t seed, std::size_t resolution,
                                       std::size_t image_size = 64, const Normalization& norm = {}) {
  TensorDataset d;
  d.classes = kSynthFamilies;
  for (std::size_t c = 0; c < kSynthFamilies; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      d.images.push_back(to_network_input(synth_image(c, i, seed, image_size), resolution, norm));
      d.labels.push_back(c);
    }
  }
  return d;
}

}  // namespace lostnet

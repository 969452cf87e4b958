#pragma once

// Named parameter storage, deterministic initialization, and the "LNW1"
// binary weight format.
//
// File layout (little-endian):
//   magic "LNW1" | version u32 | tensor count u32
//   per tensor: name length u16 | UTF-8 name | dtype u8 (0 = f32, 1 = f64)
//               | rank u8 | dims u32 x rank | raw values

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "lostnet/network.hpp"
#include "lostnet/tensor.hpp"

namespace lostnet {

/// Insertion-ordered map from layer-qualified name to tensor.
template <typename T>
class WeightStore {
 public:
  void insert(const std::string& name, Tensor<T> t) {
    if (index_.count(name)) throw std::invalid_argument("weight store: duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(t));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return entries_.size(); }

  Tensor<T>& at(const std::string& name) { return entries_[lookup(name)].second; }
  const Tensor<T>& at(const std::string& name) const { return entries_[lookup(name)].second; }

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor<T>>>& entries() { return entries_; }

  template <typename U>
  WeightStore<U> cast() const {
    WeightStore<U> out;
    for (const auto& [name, t] : entries_) out.insert(name, t.template cast<U>());
    return out;
  }

  friend bool operator==(const WeightStore& a, const WeightStore& b) { return a.entries_ == b.entries_; }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("weight store: no parameter named " + name);
    return it->second;
  }

  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Conv weights ~ N(0, 2 / fan_in), linear weights ~ N(0, 1 / fan_in);
/// biases and batchnorm shift 0, batchnorm scale 1, running var 1. The
/// projection batchnorm scale of every block with a shortcut starts at 0, so
/// those blocks begin as identities; a deep random stack otherwise trains
/// unstably from scratch.
template <typename T>
WeightStore<T> init_weights(const NetworkSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  WeightStore<T> store;
  for (const auto& p : parameter_table(spec)) {
    Tensor<T> t(p.shape);
    const auto ends_with = [&](const char* suffix) {
      const std::size_t n = std::strlen(suffix);
      return p.name.size() >= n && p.name.compare(p.name.size() - n, n, suffix) == 0;
    };
    if (p.fan_in > 0) {
      const bool is_conv = p.shape.h() > 1 || p.shape.w() > 1 || ends_with(".conv.weight");
      const double gain = is_conv ? 2.0 : 1.0;
      std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(p.fan_in)));
      for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    } else if (ends_with(".bn.scale") || ends_with(".bn.running_var")) {
      t.fill(T(1));
    }
    store.insert(p.name, std::move(t));
  }
  for (const auto& l : spec.layers) {
    if (const auto* b = std::get_if<InvertedResidualLayer>(&l); b && b->config.has_shortcut()) {
      store.at(b->name + ".project.bn.scale").fill(T(0));
    }
  }
  return store;
}

// ---------------------------------------------------------------------------
// Serialization

class WeightFileError : public std::runtime_error {
 public:
  enum class Kind { BadMagic, BadVersion, Truncated, BadDtype, BadRank, ShapeMismatch, MissingParameter,
                    UnknownParameter, DuplicateParameter };

  WeightFileError(Kind kind, const std::string& message, std::string parameter = {})
      : std::runtime_error(message), kind_(kind), parameter_(std::move(parameter)) {}

  Kind kind() const { return kind_; }
  const std::string& parameter() const { return parameter_; }

 private:
  Kind kind_;
  std::string parameter_;
};

inline constexpr char kWeightMagic[4] = {'L', 'N', 'W', '1'};
inline constexpr std::uint32_t kWeightFormatVersion = 1;

namespace detail {

template <typename U>
void put_le(std::ostream& os, U v) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                  std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                     std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
  const Bits b = std::bit_cast<Bits>(v);
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((b >> (8 * i)) & 0xFF);
  os.write(buf, sizeof(U));
}

template <typename U>
U get_le(std::istream& is, const std::string& what) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                  std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                     std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw WeightFileError(WeightFileError::Kind::Truncated, "weight file truncated while reading " + what);
  }
  Bits b = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) b |= static_cast<Bits>(buf[i]) << (8 * i);
  return std::bit_cast<U>(b);
}

template <typename T>
constexpr std::uint8_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 0 : 1;
}

}  // namespace detail

template <typename T>
void save_weights(const WeightStore<T>& store, std::ostream& os) {
  os.write(kWeightMagic, 4);
  detail::put_le<std::uint32_t>(os, kWeightFormatVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, t] : store.entries()) {
    if (name.size() > 0xFFFF) throw std::invalid_argument("save_weights: name too long: " + name);
    detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint8_t>(os, detail::dtype_code<T>());
    detail::put_le<std::uint8_t>(os, 4);
    for (std::size_t d = 0; d < 4; ++d) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape()[d]));
    for (const T v : t.values()) detail::put_le<T>(os, v);
  }
  if (!os) throw std::runtime_error("save_weights: write failed");
}

/// Reads any well-formed LNW1 stream, converting values to T.
template <typename T>
WeightStore<T> load_weights(std::istream& is) {
  using K = WeightFileError::Kind;
  char magic[4];
  if (!is.read(magic, 4)) throw WeightFileError(K::Truncated, "weight file truncated while reading magic");
  if (std::memcmp(magic, kWeightMagic, 4) != 0) throw WeightFileError(K::BadMagic, "not an LNW1 weight file (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(is, "version");
  if (version != kWeightFormatVersion) {
    throw WeightFileError(K::BadVersion, "unsupported weight file version " + std::to_string(version));
  }
  const auto count = detail::get_le<std::uint32_t>(is, "tensor count");
  WeightStore<T> store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::get_le<std::uint16_t>(is, "name length of tensor " + std::to_string(i));
    std::string name(len, '\0');
    if (len && !is.read(name.data(), len)) {
      throw WeightFileError(K::Truncated, "weight file truncated while reading name of tensor " + std::to_string(i));
    }
    const auto dtype = detail::get_le<std::uint8_t>(is, "dtype of " + name);
    if (dtype > 1) throw WeightFileError(K::BadDtype, "unknown dtype code " + std::to_string(dtype) + " for " + name, name);
    const auto rank = detail::get_le<std::uint8_t>(is, "rank of " + name);
    if (rank > 4) throw WeightFileError(K::BadRank, "rank " + std::to_string(rank) + " > 4 for " + name, name);
    Shape shape(1, 1, 1, 1);
    for (std::size_t d = 0; d < rank; ++d) shape.dims[d] = detail::get_le<std::uint32_t>(is, "dims of " + name);
    std::vector<T> data(shape.numel());
    for (auto& v : data) {
      v = dtype == 0 ? static_cast<T>(detail::get_le<float>(is, "values of " + name))
                     : static_cast<T>(detail::get_le<double>(is, "values of " + name));
    }
    if (store.contains(name)) throw WeightFileError(K::DuplicateParameter, "duplicate tensor " + name, name);
    store.insert(name, Tensor<T>(shape, std::move(data)));
  }
  return store;
}

/// Every parameter of the NetworkSpec present with the right shape, nothing extra.
template <typename T>
void validate_weights(const WeightStore<T>& store, const NetworkSpec& spec) {
  using K = WeightFileError::Kind;
  const auto table = parameter_table(spec);
  for (const auto& p : table) {
    if (!store.contains(p.name)) throw WeightFileError(K::MissingParameter, "missing parameter " + p.name, p.name);
    const Shape& got = store.at(p.name).shape();
    if (got != p.shape) {
      throw WeightFileError(K::ShapeMismatch,
                            "parameter " + p.name + " has shape " + got.str() + ", expected " + p.shape.str(), p.name);
    }
  }
  if (store.size() != table.size()) {
    for (const auto& [name, t] : store.entries()) {
      bool known = false;
      for (const auto& p : table) known = known || p.name == name;
      if (!known) throw WeightFileError(K::UnknownParameter, "unexpected parameter " + name, name);
    }
  }
}

template <typename T>
WeightStore<T> load_weights(std::istream& is, const NetworkSpec& spec) {
  WeightStore<T> store = load_weights<T>(is);
  validate_weights(store, spec);
  return store;
}

}  // namespace lostnet

#pragma once

// Persistent item store: an append-only journal of JSON records plus a
// content-addressed blob directory.
//
//   <dir>/journal.log            "lostnet-journal v1", then one record per line
//   <dir>/blobs/<2 hex>/<sha256> image bytes as uploaded
//
// A record reaches the in-memory index only after its journal line has been
// written, so readers never see an item whose append failed.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lostnet/digest.hpp"
#include "lostnet/image.hpp"
#include "lostnet/phash.hpp"

namespace lostnet {

inline constexpr const char* kJournalHeader = "lostnet-journal v1";
inline constexpr std::size_t kMaxDescriptionBytes = 2048;
inline constexpr std::size_t kMaxLocationBytes = 256;

struct ItemRecord {
  std::uint64_t id = 0;
  std::string category;
  std::string image_ref;  // relative to the registry directory
  PerceptualHash hash;
  std::string description;
  std::string location;
  std::int64_t registered_at = 0;  // UTC seconds

  friend bool operator==(const ItemRecord&, const ItemRecord&) = default;
};

class RegistryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidCategoryError : public RegistryError {
 public:
  InvalidCategoryError(const std::string& category, std::vector<std::string> valid)
      : RegistryError(message(category, valid)), category_(category), valid_(std::move(valid)) {}

  const std::string& category() const { return category_; }
  const std::vector<std::string>& valid() const { return valid_; }

 private:
  static std::string message(const std::string& category, const std::vector<std::string>& valid) {
    std::string m = "unknown category '" + category + "'; valid categories:";
    for (std::size_t i = 0; i < valid.size(); ++i) m += (i ? ", " : " ") + valid[i];
    return m;
  }

  std::string category_;
  std::vector<std::string> valid_;
};

class ItemNotFoundError : public RegistryError {
 public:
  explicit ItemNotFoundError(std::uint64_t id) : RegistryError("no item with id " + std::to_string(id)) {}
};

inline nlohmann::json to_json(const ItemRecord& r) {
  return {{"id", r.id},
          {"category", r.category},
          {"image_ref", r.image_ref},
          {"hash", r.hash.hex()},
          {"description", r.description},
          {"location", r.location},
          {"registered_at", r.registered_at}};
}

/// Throws RegistryError naming the offending field.
inline ItemRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw RegistryError("record is not a JSON object");
  auto field = [&](const char* k) -> const nlohmann::json& {
    const auto it = j.find(k);
    if (it == j.end()) throw RegistryError(std::string("record lacks '") + k + "'");
    return *it;
  };
  ItemRecord r;
  const auto& id = field("id");
  if (!id.is_number_unsigned()) throw RegistryError("'id' must be a positive integer");
  r.id = id.get<std::uint64_t>();
  for (auto [key, dst] : {std::pair{"category", &r.category}, std::pair{"image_ref", &r.image_ref},
                          std::pair{"description", &r.description}, std::pair{"location", &r.location}}) {
    const auto& v = field(key);
    if (!v.is_string()) throw RegistryError(std::string("'") + key + "' must be a string");
    *dst = v.get<std::string>();
  }
  const auto& h = field("hash");
  const auto parsed = h.is_string() ? PerceptualHash::from_hex(h.get<std::string>()) : std::nullopt;
  if (!parsed) throw RegistryError("'hash' must be 16 hex digits");
  r.hash = *parsed;
  const auto& t = field("registered_at");
  if (!t.is_number_integer()) throw RegistryError("'registered_at' must be an integer");
  r.registered_at = t.get<std::int64_t>();
  if (j.size() != 7) throw RegistryError("record has unexpected fields");
  return r;
}

inline std::filesystem::path blob_path(const std::string& digest) {
  return std::filesystem::path("blobs") / digest.substr(0, 2) / digest;
}

namespace detail {

inline bool valid_utf8(const std::string& s) {
  try {
    (void)nlohmann::json(s).dump();
    return true;
  } catch (const nlohmann::json::type_error&) {
    return false;
  }
}

inline bool is_blob_ref(const std::string& ref) {
  // blobs/xx/<64 hex> with xx the digest prefix
  if (ref.size() != 6 + 3 + 64 || ref.compare(0, 6, "blobs/") != 0 || ref[8] != '/') return false;
  const auto hex = ref.substr(9);
  if (hex.compare(0, 2, ref, 6, 2) != 0) return false;
  return std::all_of(hex.begin(), hex.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

}  // namespace detail

/// Checks a record against the field invariants; throws RegistryError.
inline void validate_record(const ItemRecord& r, const std::vector<std::string>& classes) {
  if (r.id == 0) throw RegistryError("id must be positive");
  if (std::find(classes.begin(), classes.end(), r.category) == classes.end()) {
    throw InvalidCategoryError(r.category, classes);
  }
  if (!detail::is_blob_ref(r.image_ref)) throw RegistryError("malformed image_ref '" + r.image_ref + "'");
  if (r.description.size() > kMaxDescriptionBytes) {
    throw RegistryError("description exceeds " + std::to_string(kMaxDescriptionBytes) + " bytes");
  }
  if (r.location.size() > kMaxLocationBytes) {
    throw RegistryError("location exceeds " + std::to_string(kMaxLocationBytes) + " bytes");
  }
  if (!detail::valid_utf8(r.description)) throw RegistryError("description is not valid UTF-8");
  if (!detail::valid_utf8(r.location)) throw RegistryError("location is not valid UTF-8");
}

struct CorruptLine {
  std::size_t line = 0;  // 1-based, counting the header
  std::string reason;
};

struct RestoreResult {
  std::vector<ItemRecord> records;
  std::optional<CorruptLine> corrupt;
  /// Byte length of the header plus every valid record line.
  std::size_t valid_bytes = 0;
};

/// Replays a journal. Stops at the first line that fails to parse or breaks an
/// invariant (ids must run 1, 2, 3, ...). A missing or wrong header throws.
inline RestoreResult restore_journal(std::istream& in, const std::vector<std::string>& classes) {
  RestoreResult out;
  std::string line;
  if (!std::getline(in, line) || line != kJournalHeader) {
    throw RegistryError("journal header is not '" + std::string(kJournalHeader) + "'");
  }
  if (in.eof()) {
    out.corrupt = CorruptLine{1, "header line is not newline-terminated"};
    return out;
  }
  out.valid_bytes = line.size() + 1;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    try {
      if (in.eof()) throw RegistryError("truncated line (no trailing newline)");
      ItemRecord r = record_from_json(nlohmann::json::parse(line));
      validate_record(r, classes);
      if (r.id != out.records.size() + 1) {
        throw RegistryError("id " + std::to_string(r.id) + " out of sequence, expected " +
                            std::to_string(out.records.size() + 1));
      }
      out.records.push_back(std::move(r));
      out.valid_bytes += line.size() + 1;
    } catch (const std::exception& e) {
      out.corrupt = CorruptLine{lineno, e.what()};
      break;
    }
  }
  return out;
}

inline void write_journal(std::ostream& os, const std::vector<ItemRecord>& records) {
  os << kJournalHeader << '\n';
  for (const auto& r : records) os << to_json(r).dump() << '\n';
}

inline std::int64_t utc_now_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

struct RegistryOptions {
  std::function<std::int64_t()> clock = utc_now_seconds;
  /// fdatasync each journal append and blob.
  bool durable = true;
};

class Registry {
 public:
  /// Opens or creates the store at `dir`. A corrupt journal tail is moved aside
  /// to journal.log.corrupt-<line> and the journal is cut back to its valid
  /// prefix; `recovered()` reports what happened.
  Registry(std::filesystem::path dir, std::vector<std::string> classes, RegistryOptions opt = {})
      : dir_(std::move(dir)), classes_(std::move(classes)), opt_(std::move(opt)) {
    if (classes_.empty()) throw std::invalid_argument("Registry: empty class list");
    std::filesystem::create_directories(dir_ / "blobs");
    const auto jpath = journal_path();
    if (!std::filesystem::exists(jpath)) {
      std::ofstream out(jpath, std::ios::binary);
      out << kJournalHeader << '\n';
      if (!out) throw RegistryError("cannot create " + jpath.string());
    } else {
      std::ifstream in(jpath, std::ios::binary);
      auto res = restore_journal(in, classes_);
      in.close();
      if (res.corrupt) {
        const auto backup = jpath.string() + ".corrupt-" + std::to_string(res.corrupt->line);
        std::filesystem::copy_file(jpath, backup, std::filesystem::copy_options::overwrite_existing);
        if (res.valid_bytes == 0) {
          std::ofstream out(jpath, std::ios::binary | std::ios::trunc);
          out << kJournalHeader << '\n';
        } else {
          std::filesystem::resize_file(jpath, res.valid_bytes);
        }
      }
      recovered_ = res.corrupt;
      records_ = std::move(res.records);
    }
    fd_ = ::open(jpath.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
    if (fd_ < 0) throw RegistryError("cannot open " + jpath.string() + " for appending");
  }

  ~Registry() {
    if (fd_ >= 0) ::close(fd_);
  }

  Registry(const Registry&) = delete;
  Registry& operator=(const Registry&) = delete;

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path journal_path() const { return dir_ / "journal.log"; }
  const std::vector<std::string>& classes() const { return classes_; }
  const std::optional<CorruptLine>& recovered() const { return recovered_; }

  bool valid_category(const std::string& c) const {
    return std::find(classes_.begin(), classes_.end(), c) != classes_.end();
  }

  void require_category(const std::string& c) const {
    if (!valid_category(c)) throw InvalidCategoryError(c, classes_);
  }

  /// Decodes and hashes the image, stores the blob, appends the record.
  /// Throws ImageDecodeError, InvalidCategoryError or RegistryError.
  ItemRecord register_item(std::span<const std::uint8_t> image, const std::string& category,
                           const std::string& description = {}, const std::string& location = {}) {
    require_category(category);
    ItemRecord r;
    r.category = category;
    r.description = description;
    r.location = location;
    r.hash = phash_compute(image);
    const auto digest = sha256_hex(image);
    r.image_ref = blob_path(digest).generic_string();
    r.id = 1;  // placeholder for validation; assigned under the lock
    validate_record(r, classes_);
    store_blob(image, r.image_ref);

    std::unique_lock lock(mu_);
    r.id = records_.size() + 1;
    r.registered_at = opt_.clock();
    const std::string line = to_json(r).dump() + "\n";
    append(line);
    records_.push_back(r);
    return r;
  }

  ItemRecord get(std::uint64_t id) const {
    std::shared_lock lock(mu_);
    if (id == 0 || id > records_.size()) throw ItemNotFoundError(id);
    return records_[id - 1];
  }

  std::vector<ItemRecord> list_by_category(const std::string& category) const {
    require_category(category);
    std::shared_lock lock(mu_);
    std::vector<ItemRecord> out;
    for (const auto& r : records_) {
      if (r.category == category) out.push_back(r);
    }
    return out;
  }

  std::vector<ItemRecord> all() const {
    std::shared_lock lock(mu_);
    return records_;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return records_.size();
  }

  std::vector<std::uint8_t> read_image(std::uint64_t id) const {
    const auto r = get(id);
    std::ifstream in(dir_ / r.image_ref, std::ios::binary);
    if (!in) throw RegistryError("image blob missing for item " + std::to_string(id) + ": " + r.image_ref);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }

 private:
  void store_blob(std::span<const std::uint8_t> bytes, const std::string& ref) {
    const auto final_path = dir_ / ref;
    if (std::filesystem::exists(final_path)) return;
    std::filesystem::create_directories(final_path.parent_path());
    static std::atomic<std::uint64_t> counter{0};
    const auto tmp = final_path.string() + ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw RegistryError("cannot create " + tmp);
    const bool ok = write_all(fd, bytes.data(), bytes.size()) && (!opt_.durable || ::fdatasync(fd) == 0);
    ::close(fd);
    if (!ok || std::rename(tmp.c_str(), final_path.c_str()) != 0) {
      std::filesystem::remove(tmp);
      throw RegistryError("cannot store blob " + ref);
    }
  }

  // A failed append is cut back off so the next one starts on a clean line.
  void append(const std::string& line) {
    const off_t before = ::lseek(fd_, 0, SEEK_END);
    if (!write_all(fd_, line.data(), line.size()) || (opt_.durable && ::fdatasync(fd_) != 0)) {
      if (before >= 0 && ::ftruncate(fd_, before) != 0) {
        throw RegistryError("journal append failed and could not be rolled back");
      }
      throw RegistryError("journal append failed");
    }
  }

  static bool write_all(int fd, const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    while (n > 0) {
      const ssize_t w = ::write(fd, p, n);
      if (w < 0) {
        if (errno == EINTR) continue;
        return false;
      }
      p += w;
      n -= static_cast<std::size_t>(w);
    }
    return true;
  }

  std::filesystem::path dir_;
  std::vector<std::string> classes_;
  RegistryOptions opt_;
  std::optional<CorruptLine> recovered_;
  mutable std::shared_mutex mu_;
  std::vector<ItemRecord> records_;
  int fd_ = -1;
};

}  // namespace lostnet

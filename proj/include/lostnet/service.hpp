#pragma once

// classify -> filter registry by category -> rank by pHash distance -> top k,
// and the HTTP surface over it.

#include <cmath>
#include <cstdlib>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "lostnet/digest.hpp"
#include "lostnet/image.hpp"
#include "lostnet/model.hpp"
#include "lostnet/ops.hpp"
#include "lostnet/phash.hpp"
#include "lostnet/registry.hpp"
#include "lostnet/weights.hpp"

namespace lostnet {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;
inline constexpr std::size_t kDefaultTopK = 5;
inline constexpr std::size_t kMaxTopK = 1000;
inline constexpr int kDefaultPort = 8080;

struct Classification {
  std::size_t index = 0;
  std::string name;
  double confidence = 0;
  std::vector<double> probabilities;
};

/// Immutable after construction; classify() is safe to call concurrently.
class Classifier {
 public:
  Classifier(NetworkSpec spec, WeightStore<float> weights, std::vector<std::string> classes, std::size_t resolution,
             Normalization norm = {})
      : spec_(std::move(spec)),
        weights_(std::move(weights)),
        classes_(std::move(classes)),
        resolution_(resolution),
        norm_(norm) {
    validate_weights(weights_, spec_);
    if (classes_.size() != spec_.num_classes) {
      throw std::invalid_argument("Classifier: " + std::to_string(classes_.size()) + " class names for a " +
                                  std::to_string(spec_.num_classes) + "-class network");
    }
    if (resolution_ == 0) throw std::invalid_argument("Classifier: zero input resolution");
    std::ostringstream os;
    save_weights(weights_, os);
    digest_ = sha256_hex(os.str());
  }

  Classification classify(const Image& img) const {
    const auto logits = infer_logits(spec_, weights_, to_network_input(img, resolution_, norm_));
    Tensor<double> z(logits.shape());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = logits[i];
    const auto p = softmax(z);
    Classification c;
    c.probabilities.assign(p.data(), p.data() + p.size());
    c.index = static_cast<std::size_t>(
        std::max_element(c.probabilities.begin(), c.probabilities.end()) - c.probabilities.begin());
    c.name = classes_[c.index];
    c.confidence = c.probabilities[c.index];
    return c;
  }

  Classification classify(std::span<const std::uint8_t> bytes) const { return classify(decode_image(bytes)); }

  const NetworkSpec& spec() const { return spec_; }
  const WeightStore<float>& weights() const { return weights_; }
  const std::vector<std::string>& classes() const { return classes_; }
  std::size_t resolution() const { return resolution_; }
  /// SHA-256 of the serialized weights.
  const std::string& weights_digest() const { return digest_; }

 private:
  NetworkSpec spec_;
  WeightStore<float> weights_;
  std::vector<std::string> classes_;
  std::size_t resolution_;
  Normalization norm_;
  std::string digest_;
};

struct SearchMatch {
  ItemRecord item;
  int distance = 0;
};

struct SearchResult {
  Classification category;
  PerceptualHash query_hash;
  std::vector<SearchMatch> matches;  // ascending distance, ties by id
};

inline SearchResult search(const Classifier& clf, const Registry& reg, std::span<const std::uint8_t> bytes,
                           std::size_t top_k = kDefaultTopK) {
  if (top_k == 0 || top_k > kMaxTopK) {
    throw std::invalid_argument("top_k must be in [1, " + std::to_string(kMaxTopK) + "]");
  }
  const Image img = decode_image(bytes);
  SearchResult out;
  out.category = clf.classify(img);
  out.query_hash = phash_compute(img);
  const auto items = reg.list_by_category(out.category.name);
  std::vector<std::pair<std::uint64_t, PerceptualHash>> cands;
  cands.reserve(items.size());
  for (const auto& r : items) cands.emplace_back(r.id, r.hash);
  for (const auto& m : rank_by_similarity(out.query_hash, cands, top_k)) {
    // items is ascending by id, so binary search by id.
    const auto it = std::lower_bound(items.begin(), items.end(), m.id,
                                     [](const ItemRecord& r, std::uint64_t id) { return r.id < id; });
    out.matches.push_back({*it, m.distance});
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json item_json(const ItemRecord& r) {
  auto j = to_json(r);
  j["image_url"] = "/api/items/" + std::to_string(r.id) + "/image";
  return j;
}

inline nlohmann::json to_json(const SearchResult& s) {
  nlohmann::json matches = nlohmann::json::array();
  for (const auto& m : s.matches) {
    matches.push_back({{"id", m.item.id},
                       {"image_url", "/api/items/" + std::to_string(m.item.id) + "/image"},
                       {"distance", m.distance},
                       {"category", m.item.category},
                       {"description", m.item.description},
                       {"location", m.item.location}});
  }
  return {{"schema_version", kSchemaVersion},
          {"category", {{"name", s.category.name}, {"index", s.category.index}, {"confidence", s.category.confidence}}},
          {"probabilities", s.category.probabilities},
          {"query_hash", s.query_hash.hex()},
          {"matches", matches}};
}

// ---------------------------------------------------------------------------
// HTTP

/// LOSTNET_PORT if set and valid, else the default.
inline int port_from_env(int fallback = kDefaultPort) {
  const char* v = std::getenv("LOSTNET_PORT");
  if (!v || !*v) return fallback;
  char* end = nullptr;
  const long p = std::strtol(v, &end, 10);
  if (*end != '\0' || p < 1 || p > 65535) throw std::invalid_argument(std::string("LOSTNET_PORT is not a port: ") + v);
  return static_cast<int>(p);
}

class HttpService {
 public:
  HttpService(const Classifier& clf, Registry& reg) : clf_(clf), reg_(reg) {
    if (clf_.classes() != reg_.classes()) throw std::invalid_argument("HttpService: classifier and registry classes differ");
    routes();
  }

  ~HttpService() { stop(); }

  /// Binds and serves on a background thread; port 0 picks a free port.
  /// Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  /// Serves on the calling thread until stop().
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  httplib::Server& server() { return server_; }

 private:
  static void reply(httplib::Response& res, int status, nlohmann::json body) {
    body["schema_version"] = kSchemaVersion;
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void error(httplib::Response& res, int status, const std::string& code, const std::string& message,
                    nlohmann::json extra = nlohmann::json::object()) {
    extra["error"] = message;
    extra["code"] = code;
    reply(res, status, std::move(extra));
  }

  static std::span<const std::uint8_t> as_bytes(const std::string& s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
  }

  static std::string field(const httplib::Request& req, const std::string& key) {
    if (req.has_file(key)) return req.get_file_value(key).content;
    if (req.has_param(key)) return req.get_param_value(key);
    return {};
  }

  std::optional<std::uint64_t> parse_id(const std::string& s) const {
    if (s.empty() || s.size() > 19 || !std::all_of(s.begin(), s.end(), ::isdigit)) return std::nullopt;
    return std::stoull(s);
  }

  void invalid_category(httplib::Response& res, const InvalidCategoryError& e) {
    error(res, 400, "invalid_category", e.what(), {{"valid_categories", e.valid()}});
  }

  void routes() {
    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string msg = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        msg = e.what();
      } catch (...) {
      }
      error(res, 500, "internal", msg);
    });
    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) error(res, res.status, "http_" + std::to_string(res.status), httplib::status_message(res.status));
    });

    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200,
            {{"status", "ok"},
             {"version", kVersion},
             {"weights_digest", clf_.weights_digest()},
             {"classes", clf_.classes().size()},
             {"items", reg_.size()}});
    });

    server_.Get("/api/categories", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, {{"categories", clf_.classes()}});
    });

    server_.Post("/api/search", [this](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_file("image")) return error(res, 400, "missing_image", "multipart field 'image' is required");
      std::size_t top_k = kDefaultTopK;
      if (const auto k = field(req, "top_k"); !k.empty()) {
        const auto parsed = parse_id(k);
        if (!parsed || *parsed == 0 || *parsed > kMaxTopK) {
          return error(res, 400, "invalid_top_k", "top_k must be an integer in [1, " + std::to_string(kMaxTopK) + "]");
        }
        top_k = *parsed;
      }
      try {
        reply(res, 200, to_json(search(clf_, reg_, as_bytes(req.get_file_value("image").content), top_k)));
      } catch (const ImageDecodeError& e) {
        error(res, 400, "undecodable_image", std::string("undecodable image: ") + e.what());
      }
    });

    server_.Post("/api/items", [this](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_file("image")) return error(res, 400, "missing_image", "multipart field 'image' is required");
      try {
        const auto r = reg_.register_item(as_bytes(req.get_file_value("image").content), field(req, "category"),
                                          field(req, "description"), field(req, "location"));
        reply(res, 201, item_json(r));
      } catch (const InvalidCategoryError& e) {
        invalid_category(res, e);
      } catch (const ImageDecodeError& e) {
        error(res, 400, "undecodable_image", std::string("undecodable image: ") + e.what());
      } catch (const RegistryError& e) {
        error(res, 400, "invalid_item", e.what());
      }
    });

    server_.Get("/api/items", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const auto items = req.has_param("category") ? reg_.list_by_category(req.get_param_value("category")) : reg_.all();
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& r : items) arr.push_back(item_json(r));
        reply(res, 200, {{"items", arr}});
      } catch (const InvalidCategoryError& e) {
        invalid_category(res, e);
      }
    });

    server_.Get(R"(/api/items/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto id = parse_id(req.matches[1]);
      if (!id) return error(res, 400, "invalid_id", "item id must be a positive integer");
      try {
        reply(res, 200, item_json(reg_.get(*id)));
      } catch (const ItemNotFoundError& e) {
        error(res, 404, "not_found", e.what());
      }
    });

    server_.Get(R"(/api/items/([^/]+)/image)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto id = parse_id(req.matches[1]);
      if (!id) return error(res, 400, "invalid_id", "item id must be a positive integer");
      try {
        const auto bytes = reg_.read_image(*id);
        const auto fmt = sniff_format(bytes);
        const char* type = fmt == ImageFormat::Png    ? "image/png"
                           : fmt == ImageFormat::Jpeg ? "image/jpeg"
                                                      : "application/octet-stream";
        res.set_content(std::string(bytes.begin(), bytes.end()), type);
      } catch (const ItemNotFoundError& e) {
        error(res, 404, "not_found", e.what());
      }
    });
  }

  const Classifier& clf_;
  Registry& reg_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace lostnet

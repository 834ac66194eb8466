#pragma once

// Read-only HTTP surface over one loaded map. `ServiceState::handle` is a
// pure function of (map, request); the httplib layer only translates.

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "common.hpp"
#include "knowledge_map.hpp"
#include "map_io.hpp"

namespace gkm {

inline constexpr int kApiVersion = 1;
inline constexpr std::size_t kDefaultNeighbors = 10;

struct ApiRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> params;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

inline nlohmann::json error_body(const std::string& code, const std::string& message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

inline int status_for(const std::string& code) {
  if (code == "unknown_id" || code == "not_found") return 404;
  if (code == "unmappable" || code == "too_few_entries" || code == "no_vocabulary") return 422;
  if (code == "method_not_allowed") return 405;
  if (code == "internal") return 500;
  return 400;
}

inline nlohmann::json to_json(const NeighborResult& n) {
  return {{"doc_id", n.doc_id}, {"distance", n.distance}, {"rank", n.rank}};
}

inline nlohmann::json to_json(const std::vector<NeighborResult>& results) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& n : results) out.push_back(to_json(n));
  return out;
}

inline nlohmann::json to_json(const ViewProjection& v) {
  nlohmann::json coords = nlohmann::json::object();
  for (const auto& [id, c] : v.view_coords) coords[id] = c;
  return {{"target_dim", v.target_dim}, {"center", v.center}, {"basis", v.basis}, {"view_coords", std::move(coords)}};
}

namespace detail {

inline std::size_t parse_count(const std::string& text, const char* name) {
  std::size_t value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) throw Error("bad_request", std::string(name) + " must be a non-negative integer");
  return value;
}

// Comma-separated finite reals.
inline Vector parse_coords(const std::string& text) {
  Vector out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw Error("bad_request", "coords must be comma-separated numbers");
    }
    if (used != item.size() || !std::isfinite(v)) throw Error("bad_request", "coords must be comma-separated numbers");
    out.push_back(v);
  }
  if (out.empty()) throw Error("bad_request", "coords must not be empty");
  return out;
}

inline const std::string& require(const ApiRequest& req, const char* name) {
  const auto it = req.params.find(name);
  if (it == req.params.end()) throw Error("bad_request", std::string("missing parameter '") + name + "'");
  return it->second;
}

}  // namespace detail

class ServiceState {
public:
  explicit ServiceState(KnowledgeMap map, nlohmann::json config_snapshot = nlohmann::json::object())
      : map_(std::move(map)), config_(std::move(config_snapshot)) {
    provenance_hash_ = sha256_hex(to_json(map_.provenance()).dump());
  }

  const KnowledgeMap& map() const { return map_; }

  ApiResponse handle(const ApiRequest& req) const {
    try {
      return route(req);
    } catch (const Error& e) {
      return {status_for(e.code()), error_body(e.code(), e.what())};
    } catch (const std::exception& e) {
      return {500, error_body("internal", e.what())};
    }
  }

private:
  ApiResponse route(const ApiRequest& req) const {
    const std::string& p = req.path;
    const bool get = req.method == "GET";
    if (p == "/api/map/meta") return get ? meta() : not_allowed();
    if (p.rfind("/api/docs/", 0) == 0 && p.size() > 10) return get ? doc(p.substr(10)) : not_allowed();
    if (p == "/api/neighbors") return get ? neighbors_of(req) : not_allowed();
    if (p == "/api/relevance") return get ? relevance_of(req) : not_allowed();
    if (p == "/api/view") return get ? view(req) : not_allowed();
    if (p == "/api/stability") return get ? stability() : not_allowed();
    if (p == "/api/locate") return req.method == "POST" ? locate(req) : not_allowed();
    throw Error("not_found", "no endpoint " + p);
  }

  static ApiResponse not_allowed() { return {405, error_body("method_not_allowed", "method not allowed")}; }

  ApiResponse meta() const {
    return {200,
            {{"api_version", kApiVersion},
             {"schema_version", kMapSchemaVersion},
             {"dim", map_.dim()},
             {"entry_count", map_.size()},
             {"provenance_hash", provenance_hash_},
             {"config_hash", map_.provenance().config_hash},
             {"vocabulary_hash", map_.vocabulary_hash()},
             {"has_vocabulary", map_.vocabulary().has_value()},
             {"config", config_}}};
  }

  ApiResponse doc(const std::string& id) const {
    const auto& e = map_.at(id);
    nlohmann::json body = {{"doc_id", e.doc_id}, {"coords", e.coords}};
    body["topic_label"] = e.topic_label ? nlohmann::json(*e.topic_label) : nlohmann::json(nullptr);
    return {200, std::move(body)};
  }

  ApiResponse neighbors_of(const ApiRequest& req) const {
    const bool by_id = req.params.count("id") > 0;
    const bool by_coords = req.params.count("coords") > 0;
    if (by_id == by_coords) throw Error("bad_request", "give exactly one of 'id' or 'coords'");
    const std::size_t k =
        req.params.count("k") ? detail::parse_count(req.params.at("k"), "k") : kDefaultNeighbors;
    if (by_id) return {200, to_json(neighbors(map_, req.params.at("id"), k))};
    return {200, to_json(neighbors(map_, detail::parse_coords(req.params.at("coords")), k))};
  }

  ApiResponse relevance_of(const ApiRequest& req) const {
    const auto& a = detail::require(req, "a");
    const auto& b = detail::require(req, "b");
    return {200, {{"a", a}, {"b", b}, {"distance", relevance(map_, a, b)}}};
  }

  ApiResponse view(const ApiRequest& req) const {
    const std::size_t dim = req.params.count("dim") ? detail::parse_count(req.params.at("dim"), "dim") : 2;
    if (dim != 2 && dim != 3) throw Error("bad_request", "dim must be 2 or 3");
    nlohmann::json body = to_json(project_to_view(map_, dim));
    nlohmann::json labels = nlohmann::json::object();
    for (const auto& e : map_.entries()) {
      if (e.topic_label) labels[e.doc_id] = *e.topic_label;
    }
    body["topic_labels"] = std::move(labels);
    return {200, std::move(body)};
  }

  ApiResponse stability() const {
    const auto& prov = map_.provenance();
    nlohmann::json reports = nlohmann::json::array();
    for (const auto& r : prov.stability_reports) reports.push_back(to_json(r));
    return {200, {{"run_seeds", prov.run_seeds}, {"chosen_run", prov.chosen_run}, {"reports", std::move(reports)}}};
  }

  ApiResponse locate(const ApiRequest& req) const {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error&) {
      throw Error("bad_request", "body must be JSON");
    }
    if (!body.is_object() || !body.contains("text") || !body.at("text").is_string()) {
      throw Error("bad_request", "body must be an object with a string 'text'");
    }
    return {200, {{"coords", locate_text(map_, body.at("text").get<std::string>())}}};
  }

  KnowledgeMap map_;
  nlohmann::json config_;
  std::string provenance_hash_;
};

struct BindAddress {
  std::string host = "127.0.0.1";
  int port = 8080;
};

// "host:port", ":port" or "port".
inline BindAddress parse_bind_address(const std::string& text) {
  BindAddress out;
  const auto colon = text.rfind(':');
  std::string port = colon == std::string::npos ? text : text.substr(colon + 1);
  if (colon != std::string::npos && colon > 0) out.host = text.substr(0, colon);
  int value = 0;
  const auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
  if (ec != std::errc{} || ptr != port.data() + port.size() || value < 0 || value > 65535) {
    throw Error("invalid_argument", "bad bind address '" + text + "'");
  }
  out.port = value;
  return out;
}

inline constexpr const char* kBindEnv = "GKM_BIND";

inline BindAddress bind_address_from_env(std::optional<std::string> fallback = std::nullopt) {
  if (const char* env = std::getenv(kBindEnv); env && *env) return parse_bind_address(env);
  return fallback ? parse_bind_address(*fallback) : BindAddress{};
}

inline constexpr const char* kPlaceholderPage =
    "<!doctype html><html><head><meta charset=\"utf-8\"><title>Knowledge map</title></head>"
    "<body><p>No UI bundle mounted. The JSON API lives under <a href=\"/api/map/meta\">/api</a>.</p></body></html>";

// Registers the API routes and static assets. `ui_dir` is served at / when given.
inline void install_routes(httplib::Server& server, const ServiceState& state,
                           const std::optional<std::filesystem::path>& ui_dir = std::nullopt) {
  auto forward = [&state](const httplib::Request& req, httplib::Response& res) {
    ApiRequest api{req.method, req.path, {}, req.body};
    for (const auto& [k, v] : req.params) api.params.emplace(k, v);
    const auto out = state.handle(api);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  };
  server.Get(R"(/api/.*)", forward);
  server.Post(R"(/api/.*)", forward);
  server.Put(R"(/api/.*)", forward);
  server.Delete(R"(/api/.*)", forward);
  if (ui_dir) {
    if (!server.set_mount_point("/", ui_dir->string())) throw Error("io", "cannot serve UI from '" + ui_dir->string() + "'");
    return;
  }
  server.Get("/", [](const httplib::Request&, httplib::Response& res) { res.set_content(kPlaceholderPage, "text/html"); });
}

}  // namespace gkm

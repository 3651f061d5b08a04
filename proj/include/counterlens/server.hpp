#pragma once
// HTTP front end for the backend registry: /v1/predict, /v1/backends, /v1/health.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <future>
#include <memory>
#include <string>
#include <thread>

#include "json.hpp"

#include "counterlens/http.hpp"
#include "counterlens/errors.hpp"
#include "counterlens/predictor.hpp"

namespace counterlens {

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_source_bytes = 1 << 20;
  int timeout_ms = 30000;
  std::string ranges_path;  // empty: shipped defaults
  std::string cors_origin = "*";
  std::size_t threads = 32;
  std::string default_backend;
  nlohmann::json backends = nlohmann::json::array({{{"id", "oracle"}, {"kind", "oracle"}}});

  void validate() const {
    if (timeout_ms <= 0) throw ConfigError("timeout_ms must be > 0");
    if (max_source_bytes == 0) throw ConfigError("max_source_bytes must be > 0");
    if (port < 0 || port > 65535) throw ConfigError("port out of range");
    if (threads == 0) throw ConfigError("threads must be > 0");
  }

  static ServerConfig from_json(const nlohmann::json& j) {
    ServerConfig c;
    try {
      c.host = j.value("host", c.host);
      c.port = j.value("port", c.port);
      c.max_source_bytes = j.value("max_source_bytes", c.max_source_bytes);
      c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
      c.ranges_path = j.value("ranges", c.ranges_path);
      c.cors_origin = j.value("cors_origin", c.cors_origin);
      c.threads = j.value("threads", c.threads);
      c.default_backend = j.value("default_backend", c.default_backend);
      if (j.contains("backends")) c.backends = j["backends"];
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("server config: ") + e.what());
    }
    c.validate();
    return c;
  }

  static ServerConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }

  // COUNTERLENS_HOST, COUNTERLENS_PORT, COUNTERLENS_REMOTE_URL, COUNTERLENS_REMOTE_MODEL.
  void apply_env() {
    if (const char* v = std::getenv("COUNTERLENS_HOST")) host = v;
    if (const char* v = std::getenv("COUNTERLENS_PORT")) {
      try {
        port = std::stoi(v);
      } catch (const std::exception&) {
        throw ConfigError(std::string("COUNTERLENS_PORT is not a number: ") + v);
      }
    }
    const char* url = std::getenv("COUNTERLENS_REMOTE_URL");
    const char* model = std::getenv("COUNTERLENS_REMOTE_MODEL");
    if (!url && !model) return;
    bool found = false;
    for (auto& b : backends) {
      if (b.value("kind", "") != "remote") continue;
      found = true;
      if (url) b["endpoint"]["url"] = url;
      if (model) b["endpoint"]["model"] = model;
    }
    if (!found && url) {
      nlohmann::json b = {{"id", "remote"}, {"kind", "remote"}, {"endpoint", {{"url", url}}}};
      if (model) b["endpoint"]["model"] = model;
      backends.push_back(b);
    }
    validate();
  }
};

inline NormRanges load_ranges(const std::string& path) {
  return path.empty() ? NormRanges::defaults() : NormRanges::load(path);
}

// Backend entries: {"id", "kind": "oracle" | "remote", ...kind-specific fields}.
inline BackendRegistry build_registry(const ServerConfig& config, const NormRanges& ranges) {
  BackendRegistry reg;
  for (const auto& b : config.backends) {
    const auto kind = b.value("kind", "");
    const auto id = b.value("id", kind);
    if (kind == "oracle") {
      std::vector<MachinePeaks> peaks = shipped_peaks();
      if (b.contains("peaks")) {
        peaks.clear();
        for (const auto& p : b["peaks"]) peaks.push_back(MachinePeaks::from_json(p));
      }
      reg.add(std::make_shared<OracleBackend>(peaks, b.value("efficiency", 0.8), ranges, StreamingCacheModel{}, id));
    } else if (kind == "remote") {
      RemoteBackend::Config rc;
      rc.id = id;
      nlohmann::json ep = b.value("endpoint", nlohmann::json::object());
      if (!ep.contains("api_key_env")) ep["api_key_env"] = "COUNTERLENS_API_KEY";
      rc.endpoint = ChatEndpoint::from_json(ep);
      rc.temperature = b.value("temperature", 0.0);
      rc.architectures = b.value("architectures", std::vector<std::string>{});
      rc.concurrent = b.value("concurrent", true);
      rc.extract.lenient = b.value("lenient", false);
      reg.add(std::make_shared<RemoteBackend>(std::move(rc)));
    } else {
      throw ConfigError("unknown backend kind '" + kind + "'");
    }
  }
  if (!config.default_backend.empty()) reg.set_default(config.default_backend);
  if (reg.empty()) throw ConfigError("no backends configured");
  return reg;
}

class PredictServer {
 public:
  PredictServer(ServerConfig config, BackendRegistry registry, NormRanges ranges)
      : config_(std::move(config)),
        registry_(std::make_shared<BackendRegistry>(std::move(registry))),
        ranges_(std::move(ranges)),
        started_(std::chrono::steady_clock::now()) {
    config_.validate();
    routes();
  }

  explicit PredictServer(ServerConfig config)
      : PredictServer(config, build_registry(config, load_ranges(config.ranges_path)), load_ranges(config.ranges_path)) {}

  PredictServer(const PredictServer&) = delete;
  PredictServer& operator=(const PredictServer&) = delete;
  ~PredictServer() { stop(); }

  // Binds (port 0 picks a free port) and serves on a background thread. Returns the port.
  int start() {
    int port = config_.port;
    if (port == 0) {
      port = svr_.bind_to_any_port(config_.host);
    } else if (!svr_.bind_to_port(config_.host, port)) {
      port = -1;
    }
    if (port < 0) throw ConfigError("cannot bind " + config_.host + ":" + std::to_string(config_.port));
    port_ = port;
    thread_ = std::thread([this] { svr_.listen_after_bind(); });
    svr_.wait_until_ready();
    return port_;
  }

  // Blocks serving on the calling thread.
  void run() {
    if (!svr_.listen(config_.host, config_.port)) {
      throw ConfigError("cannot listen on " + config_.host + ":" + std::to_string(config_.port));
    }
  }

  void stop() {
    svr_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const noexcept { return port_; }
  const BackendRegistry& registry() const noexcept { return *registry_; }

 private:
  static void send_json(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void error(httplib::Response& res, int status, const std::string& message,
                    nlohmann::ordered_json extra = nlohmann::ordered_json::object()) {
    extra["error"] = message;
    send_json(res, status, extra);
  }

  void routes() {
    const std::size_t threads = config_.threads;
    svr_.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    svr_.set_payload_max_length(config_.max_source_bytes * 2 + (64 << 10));
    svr_.set_default_headers({{"Access-Control-Allow-Origin", config_.cors_origin},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
    svr_.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    svr_.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) { health(res); });
    svr_.Get("/v1/backends", [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::ordered_json list = nlohmann::ordered_json::array();
      for (const auto& d : registry_->descriptors()) list.push_back(d.to_json());
      send_json(res, 200, {{"default", registry_->default_id()}, {"backends", list}});
    });
    svr_.Post("/v1/predict", [this](const httplib::Request& req, httplib::Response& res) { predict_route(req, res); });
  }

  void health(httplib::Response& res) {
    std::size_t healthy = 0, total = 0;
    for (const auto& d : registry_->descriptors()) {
      ++total;
      healthy += d.healthy ? 1 : 0;
    }
    const double uptime =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    send_json(res, 200, {{"status", healthy > 0 ? "ok" : "degraded"},
                         {"uptime_s", uptime},
                         {"backends_healthy", healthy},
                         {"backends_total", total}});
  }

  void predict_route(const httplib::Request& http, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(http.body);
    } catch (const nlohmann::json::parse_error& e) {
      return error(res, 400, std::string("malformed JSON body: ") + e.what());
    }
    if (!body.is_object()) return error(res, 400, "body must be a JSON object");
    const nlohmann::json echo_id = body.contains("request_id") ? body["request_id"] : nlohmann::json();
    nlohmann::ordered_json ctx = {{"request_id", echo_id}};
    auto str_field = [&](const char* name, bool required) -> std::optional<std::string> {
      if (!body.contains(name)) {
        if (required) throw DataError(std::string("missing field ") + name);
        return std::nullopt;
      }
      if (!body[name].is_string()) throw DataError(std::string("field ") + name + " must be a string");
      return body[name].get<std::string>();
    };

    PredictRequest req;
    std::string backend_id;
    try {
      req.source = *str_field("source", true);
      req.architecture = *str_field("architecture", true);
      req.compiler_flags = str_field("compiler_flags", false).value_or("");
      backend_id = str_field("backend", false).value_or(registry_->default_id());
      if (!echo_id.is_null() && !echo_id.is_number_unsigned() && !echo_id.is_string()) {
        throw DataError("request_id must be a non-negative integer or a string");
      }
      if (echo_id.is_number_unsigned()) req.request_id = echo_id.get<std::uint64_t>();
      if (req.source.size() > config_.max_source_bytes) {
        return error(res, 413, "source exceeds " + std::to_string(config_.max_source_bytes) + " bytes", ctx);
      }
      req.validate();
    } catch (const DataError& e) {
      return error(res, 400, e.what(), ctx);
    }
    ctx["backend"] = backend_id;
    auto backend = registry_->find(backend_id);
    if (!backend) return error(res, 400, "unknown backend '" + backend_id + "'", ctx);

    // The call runs detached so a stuck backend cannot hold this handler past the timeout.
    auto promise = std::make_shared<std::promise<PredictResponse>>();
    auto future = promise->get_future();
    std::thread([promise, backend, req, ranges = ranges_] {
      try {
        promise->set_value(predict(*backend, req, ranges));
      } catch (...) {
        promise->set_exception(std::current_exception());
      }
    }).detach();
    if (future.wait_for(std::chrono::milliseconds(config_.timeout_ms)) != std::future_status::ready) {
      return error(res, 504, "backend did not answer within " + std::to_string(config_.timeout_ms) + " ms", ctx);
    }
    try {
      auto out = future.get().to_json();
      out["request_id"] = echo_id;
      send_json(res, 200, out);
    } catch (const ExtractionError& e) {
      ctx["kind"] = extraction_kind_name(e.kind());
      ctx["raw"] = e.raw_text();
      error(res, 422, e.what(), ctx);
    } catch (const ValidationError& e) {
      ctx["kind"] = "out_of_range";
      ctx["metric"] = e.metric();
      error(res, 422, e.what(), ctx);
    } catch (const OracleUnavailable& e) {
      ctx["kind"] = "oracle_unavailable";
      error(res, 422, e.what(), ctx);
    } catch (const UnsupportedArchitecture& e) {
      ctx["kind"] = "unsupported_architecture";
      error(res, 422, e.what(), ctx);
    } catch (const BackendUnavailable& e) {
      error(res, 503, e.what(), ctx);
    } catch (const BackendTimeout& e) {
      error(res, 504, e.what(), ctx);
    } catch (const DataError& e) {
      error(res, 400, e.what(), ctx);
    } catch (const std::exception& e) {
      error(res, 500, e.what(), ctx);
    }
  }

  ServerConfig config_;
  std::shared_ptr<BackendRegistry> registry_;
  NormRanges ranges_;
  std::chrono::steady_clock::time_point started_;
  httplib::Server svr_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace counterlens

#pragma once
// Backend contract (source + configuration -> normalized counters) and the shipped backends.

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"

#include "counterlens/http.hpp"
#include "counterlens/chat_client.hpp"
#include "counterlens/dataset.hpp"
#include "counterlens/errors.hpp"
#include "counterlens/extract.hpp"
#include "counterlens/kernel_synth.hpp"
#include "counterlens/metrics.hpp"
#include "counterlens/roofline.hpp"

namespace counterlens {

struct PredictRequest {
  std::string source;
  std::string architecture;
  std::string compiler_flags;
  std::uint64_t request_id = 0;

  void validate() const {
    if (source.empty()) throw DataError("request source is empty");
    if (architecture.empty()) throw DataError("request architecture is empty");
  }
};

// What a backend hands back before the shared post-processing.
struct BackendAnswer {
  NormalizedCounters normalized;
  std::string raw_text;
  std::optional<std::string> compiler_flags;
  std::optional<std::string> architecture;
};

enum class BackendKind { Oracle, Remote };

inline std::string_view backend_kind_name(BackendKind k) noexcept {
  return k == BackendKind::Oracle ? "oracle" : "remote";
}

struct BackendDescriptor {
  std::string id;
  BackendKind kind = BackendKind::Remote;
  std::vector<std::string> architectures;  // empty: any
  bool concurrent = true;                  // false: registry serializes calls
  bool healthy = true;

  nlohmann::ordered_json to_json() const {
    return {{"id", id},
            {"kind", backend_kind_name(kind)},
            {"architectures", architectures},
            {"concurrent", concurrent},
            {"healthy", healthy}};
  }
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendDescriptor info() const = 0;
  virtual bool probe() const { return true; }
  virtual BackendAnswer answer(const PredictRequest& req) const = 0;
};

struct PredictResponse {
  std::uint64_t request_id = 0;
  std::string backend;
  double latency_ms = 0.0;
  NormalizedCounters normalized;
  CounterVector physical;
  std::vector<RooflinePoint> roofline;
  std::vector<std::string> warnings;
  std::string raw_text;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json norm = nlohmann::ordered_json::object();
    nlohmann::ordered_json phys = nlohmann::ordered_json::object();
    for (auto id : kAllMetrics) {
      const std::string key(metric_key(id));
      if (auto v = normalized.get(id)) norm[key] = format_unit_value(*v);
      if (auto v = physical.get(id)) phys[key] = {{"value", *v}, {"unit", info(id).unit}};
    }
    nlohmann::ordered_json roof = nlohmann::ordered_json::array();
    for (const auto& p : roofline) {
      roof.push_back({{"level", level_name(p.level)}, {"ai", p.arithmetic_intensity}, {"gflops", p.gflops}});
    }
    return {{"request_id", request_id}, {"backend", backend}, {"latency_ms", latency_ms},
            {"normalized", norm},       {"physical", phys},   {"roofline", roof},
            {"warnings", warnings}};
  }
};

// Timing wraps the backend call only; physical values and roofline points are always
// recomputed here from the normalized answer.
inline PredictResponse predict(const Backend& backend, const PredictRequest& req, const NormRanges& ranges) {
  req.validate();
  const auto desc = backend.info();
  if (!desc.architectures.empty() &&
      std::find(desc.architectures.begin(), desc.architectures.end(), req.architecture) == desc.architectures.end()) {
    throw UnsupportedArchitecture("backend '" + desc.id + "' does not support " + req.architecture);
  }
  const auto start = std::chrono::steady_clock::now();
  auto ans = backend.answer(req);
  const auto stop = std::chrono::steady_clock::now();

  PredictResponse r;
  r.request_id = req.request_id;
  r.backend = desc.id;
  r.latency_ms = std::chrono::duration<double, std::milli>(stop - start).count();
  r.normalized = ans.normalized;
  r.physical = denormalize(ans.normalized, ranges);
  r.roofline = roofline_points(r.physical);
  r.raw_text = std::move(ans.raw_text);
  if (ans.architecture && *ans.architecture != req.architecture) {
    r.warnings.push_back("answer echoes architecture '" + *ans.architecture + "'");
  }
  if (ans.compiler_flags && BuildConfig::split_flags(*ans.compiler_flags) != BuildConfig::split_flags(req.compiler_flags)) {
    r.warnings.push_back("answer echoes compiler flags '" + *ans.compiler_flags + "'");
  }
  return r;
}

// Analytic labels for generator-language kernels; refuses anything else.
class OracleBackend : public Backend {
 public:
  OracleBackend(std::vector<MachinePeaks> peaks = shipped_peaks(), double efficiency = 0.8,
                NormRanges ranges = NormRanges::defaults(), StreamingCacheModel cache = {},
                std::string id = "oracle")
      : peaks_(std::move(peaks)), efficiency_(efficiency), ranges_(std::move(ranges)),
        cache_(std::move(cache)), id_(std::move(id)) {
    if (!(efficiency_ > 0.0 && efficiency_ <= 1.0)) throw ConfigError("oracle efficiency must be in (0, 1]");
    for (const auto& p : peaks_) p.validate();
  }

  BackendDescriptor info() const override {
    BackendDescriptor d{id_, BackendKind::Oracle, {}, true, true};
    for (const auto& p : peaks_) d.architectures.push_back(p.architecture);
    return d;
  }

  // Ground truth in physical units, as used to label datasets.
  CounterVector counters(const std::string& source, const std::string& architecture) const {
    const MachinePeaks* peaks = nullptr;
    for (const auto& p : peaks_) {
      if (p.architecture == architecture) peaks = &p;
    }
    if (!peaks) throw UnsupportedArchitecture("oracle has no peaks for " + architecture);
    return oracle_counters(metadata_from_source(source), *peaks, efficiency_, cache_);
  }

  BackendAnswer answer(const PredictRequest& req) const override {
    const auto norm = quantize(normalize(counters(req.source, req.architecture), ranges_));
    auto text = assistant_text(req.architecture, req.compiler_flags,
                               serialize_counter_block(norm, req.compiler_flags, req.architecture));
    auto ex = extract_json(text);
    return {ex.normalized, std::move(text), ex.compiler_flags, ex.architecture};
  }

 private:
  std::vector<MachinePeaks> peaks_;
  double efficiency_;
  NormRanges ranges_;
  StreamingCacheModel cache_;
  std::string id_;
};

// Chat-completion service serving a fine-tuned model. Uses the training prompts verbatim.
class RemoteBackend : public Backend {
 public:
  struct Config {
    std::string id = "remote";
    ChatEndpoint endpoint;
    double temperature = 0.0;
    std::vector<std::string> architectures;
    bool concurrent = true;
    ExtractOptions extract;
  };

  explicit RemoteBackend(Config config) : config_(std::move(config)), client_(config_.endpoint) {}

  BackendDescriptor info() const override {
    return {config_.id, BackendKind::Remote, config_.architectures, config_.concurrent, true};
  }

  bool probe() const override { return client_.reachable(std::min(2.0, config_.endpoint.timeout_s)); }

  static std::vector<ChatMessage> messages(const PredictRequest& req) {
    return {{"system", std::string(kPredictSystemPrompt)},
            {"user", user_prompt(req.architecture, req.compiler_flags, req.source)}};
  }

  BackendAnswer answer(const PredictRequest& req) const override {
    ChatResult r;
    try {
      r = client_.complete(messages(req), config_.temperature);
    } catch (const ChatError& e) {
      if (e.kind() == ChatError::Kind::Timeout) throw BackendTimeout(config_.id, e.what());
      if (e.kind() == ChatError::Kind::Malformed) {
        throw ExtractionError(ExtractionKind::InvalidJson, e.what(), e.body());
      }
      throw BackendUnavailable(config_.id, e.what());
    }
    auto ex = extract_json(r.content, config_.extract);
    return {ex.normalized, std::move(r.content), ex.compiler_flags, ex.architecture};
  }

 private:
  Config config_;
  ChatClient client_;
};

// Any function producing model-style text; the text goes through the same extraction.
class TextBackend : public Backend {
 public:
  using Fn = std::function<std::string(const PredictRequest&)>;

  TextBackend(std::string id, Fn fn, bool concurrent = true, ExtractOptions extract = {})
      : id_(std::move(id)), fn_(std::move(fn)), concurrent_(concurrent), extract_(extract) {}

  BackendDescriptor info() const override { return {id_, BackendKind::Remote, {}, concurrent_, true}; }

  BackendAnswer answer(const PredictRequest& req) const override {
    auto text = fn_(req);
    auto ex = extract_json(text, extract_);
    return {ex.normalized, std::move(text), ex.compiler_flags, ex.architecture};
  }

 private:
  std::string id_;
  Fn fn_;
  bool concurrent_;
  ExtractOptions extract_;
};

// Client of a running counterlens server (POST /v1/predict).
class ServerClientBackend : public Backend {
 public:
  ServerClientBackend(std::string base_url, std::string remote_backend = {}, double timeout_s = 30.0,
                      std::string id = "server")
      : url_(std::move(base_url)), remote_backend_(std::move(remote_backend)), timeout_s_(timeout_s), id_(std::move(id)) {}

  BackendDescriptor info() const override { return {id_, BackendKind::Remote, {}, true, true}; }

  bool probe() const override {
    auto cli = client();
    auto res = cli.Get("/v1/health");
    return res && res->status == 200;
  }

  BackendAnswer answer(const PredictRequest& req) const override {
    nlohmann::json body = {{"source", req.source},
                           {"architecture", req.architecture},
                           {"compiler_flags", req.compiler_flags},
                           {"request_id", req.request_id}};
    if (!remote_backend_.empty()) body["backend"] = remote_backend_;
    auto cli = client();
    auto res = cli.Post("/v1/predict", body.dump(), "application/json");
    if (!res) throw BackendUnavailable(id_, "request failed: " + httplib::to_string(res.error()));
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
      throw BackendUnavailable(id_, "HTTP " + std::to_string(res->status) + " with non-JSON body");
    }
    if (res->status == 200) {
      if (doc.value("request_id", std::uint64_t{0}) != req.request_id) {
        throw DataError("server echoed request_id " + doc.value("request_id", nlohmann::json()).dump() +
                        " for request " + std::to_string(req.request_id));
      }
      BackendAnswer a;
      a.raw_text = res->body;
      for (const auto& [key, value] : doc.at("normalized").items()) {
        const auto id = metric_from_key(key);
        const auto v = value.is_string() ? parse_decimal(value.get<std::string>()) : std::nullopt;
        if (!id || !v) throw ExtractionError(ExtractionKind::NonNumeric, "bad normalized entry " + key, res->body, key);
        a.normalized.set(*id, *v);
      }
      return a;
    }
    const std::string message = doc.value("error", std::string("HTTP ") + std::to_string(res->status));
    if (res->status == 422) {
      throw ExtractionError(kind_from_name(doc.value("kind", "")), message, doc.value("raw", res->body));
    }
    if (res->status == 504) throw BackendTimeout(doc.value("backend", id_), message);
    throw BackendUnavailable(doc.value("backend", id_), message);
  }

 private:
  static ExtractionKind kind_from_name(const std::string& name) {
    for (auto k : {ExtractionKind::NoBlock, ExtractionKind::Ambiguous, ExtractionKind::InvalidJson,
                   ExtractionKind::MissingKey, ExtractionKind::ExtraKey, ExtractionKind::NonNumeric,
                   ExtractionKind::OutOfRange}) {
      if (extraction_kind_name(k) == name) return k;
    }
    return ExtractionKind::InvalidJson;
  }

  httplib::Client client() const {
    httplib::Client cli(url_);
    const auto secs = static_cast<time_t>(timeout_s_);
    const auto usecs = static_cast<time_t>((timeout_s_ - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    return cli;
  }

  std::string url_;
  std::string remote_backend_;
  double timeout_s_;
  std::string id_;
};

// Declared-serial backends are called one at a time.
class SerializedBackend : public Backend {
 public:
  explicit SerializedBackend(std::shared_ptr<Backend> inner) : inner_(std::move(inner)) {}

  BackendDescriptor info() const override { return inner_->info(); }
  bool probe() const override { return inner_->probe(); }
  BackendAnswer answer(const PredictRequest& req) const override {
    std::lock_guard lock(mu_);
    return inner_->answer(req);
  }

 private:
  std::shared_ptr<Backend> inner_;
  mutable std::mutex mu_;
};

class BackendRegistry {
 public:
  void add(std::shared_ptr<Backend> backend) {
    const auto desc = backend->info();
    if (desc.id.empty()) throw ConfigError("backend id is empty");
    if (find(desc.id)) throw ConfigError("duplicate backend id '" + desc.id + "'");
    if (!desc.concurrent) backend = std::make_shared<SerializedBackend>(std::move(backend));
    auto entry = std::make_unique<Entry>();
    entry->id = desc.id;
    entry->backend = std::move(backend);
    entries_.push_back(std::move(entry));
    if (default_.empty()) default_ = desc.id;
  }

  void set_default(const std::string& id) {
    if (!find(id)) throw ConfigError("unknown default backend '" + id + "'");
    default_ = id;
  }

  const std::string& default_id() const noexcept { return default_; }
  bool empty() const noexcept { return entries_.empty(); }

  std::shared_ptr<Backend> find(const std::string& id) const {
    for (const auto& e : entries_) {
      if (e->id == id) return e->backend;
    }
    return nullptr;
  }

  // Probes every backend and refreshes the health cache.
  std::vector<BackendDescriptor> descriptors() const {
    std::vector<BackendDescriptor> out;
    for (const auto& e : entries_) {
      auto d = e->backend->info();
      bool ok = false;
      try {
        ok = e->backend->probe();
      } catch (const std::exception&) {
      }
      e->healthy.store(ok);
      d.healthy = ok;
      out.push_back(std::move(d));
    }
    return out;
  }

  bool cached_health(const std::string& id) const {
    for (const auto& e : entries_) {
      if (e->id == id) return e->healthy.load();
    }
    return false;
  }

 private:
  struct Entry {
    std::string id;
    std::shared_ptr<Backend> backend;
    std::atomic<bool> healthy{true};
  };
  std::vector<std::unique_ptr<Entry>> entries_;
  std::string default_;
};

}  // namespace counterlens

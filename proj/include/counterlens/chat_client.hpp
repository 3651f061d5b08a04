#pragma once
// Minimal client for chat-completion endpoints: POST {model, messages, temperature},
// answer in choices[0].message.content. Retries transient failures with exponential backoff.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "counterlens/http.hpp"
#include "counterlens/errors.hpp"

namespace counterlens {

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatEndpoint {
  std::string url;  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key;
  double timeout_s = 60.0;
  int max_retries = 4;
  int backoff_ms = 500;
  int backoff_cap_ms = 30000;
  nlohmann::json extra = nlohmann::json::object();  // merged into every request body

  // Fields absent from `j` keep their defaults; the key itself is read from `api_key_env`.
  static ChatEndpoint from_json(const nlohmann::json& j) {
    ChatEndpoint e;
    try {
      e.url = j.value("url", e.url);
      e.path = j.value("path", e.path);
      e.model = j.value("model", e.model);
      e.timeout_s = j.value("timeout_s", e.timeout_s);
      e.max_retries = j.value("max_retries", e.max_retries);
      e.backoff_ms = j.value("backoff_ms", e.backoff_ms);
      e.backoff_cap_ms = j.value("backoff_cap_ms", e.backoff_cap_ms);
      if (j.contains("extra")) e.extra = j["extra"];
      if (const auto env = j.value("api_key_env", std::string()); !env.empty()) {
        if (const char* key = std::getenv(env.c_str())) e.api_key = key;
      }
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError(std::string("endpoint config: ") + ex.what());
    }
    if (e.timeout_s <= 0) throw ConfigError("endpoint timeout_s must be > 0");
    if (e.max_retries < 0) throw ConfigError("endpoint max_retries must be >= 0");
    return e;
  }
};

class ChatError : public Error {
 public:
  enum class Kind { Auth, RateLimited, Http, Transport, Timeout, Malformed };

  ChatError(Kind kind, const std::string& what, int status = 0, std::string body = {},
            int retries = 0)
      : Error(what), kind_(kind), status_(status), body_(std::move(body)), retries_(retries) {}

  Kind kind() const noexcept { return kind_; }
  int status() const noexcept { return status_; }
  const std::string& body() const noexcept { return body_; }
  int retries() const noexcept { return retries_; }

 private:
  Kind kind_;
  int status_;
  std::string body_;
  int retries_;
};

inline std::string_view chat_error_kind_name(ChatError::Kind k) noexcept {
  switch (k) {
    case ChatError::Kind::Auth: return "auth";
    case ChatError::Kind::RateLimited: return "rate_limited";
    case ChatError::Kind::Http: return "http";
    case ChatError::Kind::Transport: return "transport";
    case ChatError::Kind::Timeout: return "timeout";
    case ChatError::Kind::Malformed: return "malformed";
  }
  return "unknown";
}

struct ChatResult {
  std::string content;
  std::string raw_body;
  int retries = 0;
  std::vector<std::string> retry_log;  // one line per retried attempt
};

class ChatClient {
 public:
  explicit ChatClient(ChatEndpoint endpoint) : endpoint_(std::move(endpoint)) {
    if (endpoint_.url.empty()) throw ConfigError("chat endpoint url is empty");
  }

  const ChatEndpoint& endpoint() const noexcept { return endpoint_; }

  ChatResult complete(const std::vector<ChatMessage>& messages, double temperature,
                      const std::string& model_override = {}) const {
    nlohmann::json body = endpoint_.extra.is_object() ? endpoint_.extra : nlohmann::json::object();
    body["model"] = model_override.empty() ? endpoint_.model : model_override;
    body["temperature"] = temperature;
    body["messages"] = nlohmann::json::array();
    for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    const std::string payload = body.dump();

    ChatResult result;
    for (int attempt = 0;; ++attempt) {
      auto outcome = attempt_once(payload);
      if (outcome.ok) {
        result.content = std::move(outcome.content);
        result.raw_body = std::move(outcome.body);
        return result;
      }
      const bool last = attempt >= endpoint_.max_retries;
      if (!outcome.transient || last) {
        std::string what = outcome.message;
        if (outcome.transient) what += " (after " + std::to_string(result.retries) + " retries)";
        throw ChatError(outcome.kind, what, outcome.status, outcome.body, result.retries);
      }
      result.retries++;
      result.retry_log.push_back("attempt " + std::to_string(attempt + 1) + ": " + outcome.message);
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff(attempt, outcome.retry_after_ms)));
    }
  }

  // Reachability probe: any HTTP answer at all counts as reachable.
  bool reachable(double timeout_s = 2.0) const {
    auto cli = make_client(timeout_s);
    auto res = cli.Get("/");
    return static_cast<bool>(res);
  }

 private:
  struct Attempt {
    bool ok = false;
    bool transient = false;
    ChatError::Kind kind = ChatError::Kind::Transport;
    int status = 0;
    long retry_after_ms = -1;
    std::string message;
    std::string content;
    std::string body;
  };

  httplib::Client make_client(double timeout_s) const {
    httplib::Client cli(endpoint_.url);
    const auto secs = static_cast<time_t>(timeout_s);
    const auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    if (!endpoint_.api_key.empty()) {
      cli.set_default_headers({{"Authorization", "Bearer " + endpoint_.api_key}});
    }
    return cli;
  }

  Attempt attempt_once(const std::string& payload) const {
    Attempt a;
    auto cli = make_client(endpoint_.timeout_s);
    const auto start = std::chrono::steady_clock::now();
    auto res = cli.Post(endpoint_.path, payload, "application/json");
    if (!res) {
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      const auto err = res.error();
      const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                             (err == httplib::Error::Read && elapsed >= 0.9 * endpoint_.timeout_s);
      a.transient = true;
      a.kind = timed_out ? ChatError::Kind::Timeout : ChatError::Kind::Transport;
      a.message = timed_out ? "no answer within " + std::to_string(endpoint_.timeout_s) + " s"
                            : "request failed: " + httplib::to_string(err);
      return a;
    }
    a.status = res->status;
    a.body = res->body;
    if (res->status == 401 || res->status == 403) {
      a.kind = ChatError::Kind::Auth;
      a.message = "endpoint rejected credentials (HTTP " + std::to_string(res->status) + ")";
      return a;
    }
    if (res->status == 429) {
      a.transient = true;
      a.kind = ChatError::Kind::RateLimited;
      a.message = "rate limited (HTTP 429)";
      if (res->has_header("Retry-After")) {
        try {
          a.retry_after_ms = static_cast<long>(std::stod(res->get_header_value("Retry-After")) * 1000);
        } catch (const std::exception&) {
        }
      }
      return a;
    }
    if (res->status >= 500 || res->status == 408) {
      a.transient = true;
      a.kind = ChatError::Kind::Http;
      a.message = "server error (HTTP " + std::to_string(res->status) + ")";
      return a;
    }
    if (res->status != 200) {
      a.kind = ChatError::Kind::Http;
      a.message = "unexpected HTTP " + std::to_string(res->status);
      return a;
    }
    try {
      const auto doc = nlohmann::json::parse(res->body);
      a.content = doc.at("choices").at(0).at("message").at("content").get<std::string>();
      a.ok = true;
    } catch (const nlohmann::json::exception& e) {
      a.kind = ChatError::Kind::Malformed;
      a.message = std::string("malformed completion body: ") + e.what();
    }
    return a;
  }

  long backoff(int attempt, long retry_after_ms) const {
    if (retry_after_ms >= 0) return std::min<long>(retry_after_ms, endpoint_.backoff_cap_ms);
    const long base = static_cast<long>(endpoint_.backoff_ms) << std::min(attempt, 20);
    return std::min<long>(base, endpoint_.backoff_cap_ms);
  }

  ChatEndpoint endpoint_;
};

}  // namespace counterlens

#pragma once
// Scripted chat-completion endpoint for client tests.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <deque>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "counterlens/http.hpp"

namespace counterlens::testing {

struct ScriptedReply {
  int status = 200;
  std::string content;      // wrapped into a completion body when raw_body is empty
  std::string raw_body;
  int delay_ms = 0;
  std::string retry_after;  // Retry-After header value, if any
};

inline std::string completion_body(const std::string& content) {
  return nlohmann::json{{"id", "cmpl-1"},
                        {"object", "chat.completion"},
                        {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}}}}}
      .dump();
}

class MockChatServer {
 public:
  // Replies are consumed in order; once exhausted the fallback is repeated.
  explicit MockChatServer(std::vector<ScriptedReply> script, ScriptedReply fallback = {200, "ok", {}, 0, {}})
      : script_(script.begin(), script.end()), fallback_(std::move(fallback)) {
    svr_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ScriptedReply r;
      {
        std::lock_guard lock(mu_);
        requests_.push_back(nlohmann::json::parse(req.body));
        auth_.push_back(req.get_header_value("Authorization"));
        if (!script_.empty()) {
          r = script_.front();
          script_.pop_front();
        } else {
          r = fallback_;
        }
      }
      if (r.delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(r.delay_ms));
      res.status = r.status;
      if (!r.retry_after.empty()) res.set_header("Retry-After", r.retry_after);
      res.set_content(r.raw_body.empty() ? completion_body(r.content) : r.raw_body, "application/json");
    });
    port_ = svr_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { svr_.listen_after_bind(); });
    svr_.wait_until_ready();
  }
  ~MockChatServer() {
    svr_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::vector<nlohmann::json> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }
  std::vector<std::string> auth_headers() const {
    std::lock_guard lock(mu_);
    return auth_;
  }

 private:
  httplib::Server svr_;
  std::thread thread_;
  int port_ = 0;
  mutable std::mutex mu_;
  std::deque<ScriptedReply> script_;
  ScriptedReply fallback_;
  std::vector<nlohmann::json> requests_;
  std::vector<std::string> auth_;
};

// A port nothing listens on: bind without listening, remember, release.
inline int closed_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

}  // namespace counterlens::testing

#pragma once
// Harvesting kernels from a chat-completion service and filtering the ones that do not compile.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "counterlens/chat_client.hpp"
#include "counterlens/errors.hpp"
#include "counterlens/kernel_analysis.hpp"
#include "counterlens/process.hpp"

namespace counterlens {

inline constexpr std::string_view kHarvestSystemPrompt =
    "You are a skilled GPU programmer. Your response will be a GPU kernel with the proper "
    "includes and main file. The file should compile and run and use double or float data "
    "types and large problem sizes. Your response should not contain any special markdown "
    "formatting like ```cpp or comments.";

struct PromptJob {
  std::string problem;
  std::string variant;
  double temperature = 0.7;
  std::string model;
  std::string tag;

  nlohmann::ordered_json to_json() const {
    return {{"problem", problem}, {"variant", variant}, {"temperature", temperature},
            {"model", model},     {"tag", tag}};
  }
  static PromptJob from_json(const nlohmann::json& j) {
    PromptJob p;
    p.problem = j.value("problem", "");
    p.variant = j.value("variant", "");
    p.temperature = j.value("temperature", p.temperature);
    p.model = j.value("model", "");
    p.tag = j.value("tag", "");
    return p;
  }
  friend bool operator==(const PromptJob&, const PromptJob&) = default;
};

struct Prompt {
  std::string system;
  std::string user;
};

// "Generate a {variant} {problem} kernel"; relative-clause variants ("that uses ...") follow
// the noun phrase instead of preceding it.
inline Prompt build_prompt(const PromptJob& job) {
  std::string user = "Generate a ";
  const bool trailing = job.variant.rfind("that ", 0) == 0 || job.variant.rfind("which ", 0) == 0 ||
                        job.variant.rfind("with ", 0) == 0;
  if (job.variant.empty()) {
    user += job.problem + " kernel";
  } else if (trailing) {
    user += job.problem + " kernel " + job.variant;
  } else {
    user += job.variant + " " + job.problem + " kernel";
  }
  return {std::string(kHarvestSystemPrompt), user};
}

// Problem x variant x temperature sweep in that nesting order.
inline std::vector<PromptJob> expand_jobs(const std::vector<std::string>& problems,
                                          const std::vector<std::string>& variants,
                                          const std::vector<double>& temperatures,
                                          const std::string& model) {
  std::vector<PromptJob> jobs;
  for (const auto& p : problems) {
    for (const auto& v : variants) {
      for (double t : temperatures) {
        if (t < 0.0) throw ConfigError("temperature must be >= 0");
        jobs.push_back({p, v, t, model, ""});
      }
    }
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) jobs[i].tag = "job-" + std::to_string(i);
  return jobs;
}

// Non-empty, non-comment lines of a list file.
inline std::vector<std::string> read_list_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    out.push_back(line.substr(b, e - b + 1));
  }
  return out;
}

// Returns the body of the first ``` fenced block, or the trimmed text if there is none.
inline std::string strip_fences(std::string_view text) {
  auto trim = [](std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
  };
  const auto open = text.find("```");
  if (open == std::string_view::npos) return trim(text);
  auto body_start = text.find('\n', open);
  if (body_start == std::string_view::npos) return trim(text.substr(open + 3));
  ++body_start;
  auto close = text.find("```", body_start);
  if (close == std::string_view::npos) close = text.size();
  auto body = std::string(text.substr(body_start, close - body_start));
  while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
  return body + "\n";
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

enum class CompileStatus { Unknown, Ok, Failed };

inline std::string_view status_name(CompileStatus s) noexcept {
  switch (s) {
    case CompileStatus::Unknown: return "unknown";
    case CompileStatus::Ok: return "ok";
    case CompileStatus::Failed: return "failed";
  }
  return "unknown";
}

inline CompileStatus status_from_name(std::string_view name) {
  if (name == "unknown") return CompileStatus::Unknown;
  if (name == "ok") return CompileStatus::Ok;
  if (name == "failed") return CompileStatus::Failed;
  throw DataError("unknown compile status '" + std::string(name) + "'");
}

class HarvestedKernel {
 public:
  std::string id;
  std::string source;
  PromptJob job;
  std::string timestamp;
  int retries = 0;
  std::vector<std::string> retry_log;

  CompileStatus status() const noexcept { return status_; }
  const std::string& failure_log() const noexcept { return failure_log_; }

  // Only unknown -> ok and unknown -> failed are legal; re-asserting the current state is a no-op.
  void set_status(CompileStatus next, std::string log = {}) {
    if (next == status_) return;
    if (status_ != CompileStatus::Unknown || next == CompileStatus::Unknown) {
      throw DomainError("illegal compile status transition " + std::string(status_name(status_)) +
                        " -> " + std::string(status_name(next)));
    }
    status_ = next;
    failure_log_ = std::move(log);
  }

  nlohmann::ordered_json to_json() const {
    return {{"id", id},
            {"source", source},
            {"job", job.to_json()},
            {"timestamp", timestamp},
            {"retries", retries},
            {"compile_status", status_name(status_)},
            {"failure_log", failure_log_}};
  }

  static HarvestedKernel from_json(const nlohmann::json& j) {
    HarvestedKernel k;
    try {
      k.id = j.at("id").get<std::string>();
      k.source = j.at("source").get<std::string>();
      k.job = PromptJob::from_json(j.at("job"));
      k.timestamp = j.value("timestamp", "");
      k.retries = j.value("retries", 0);
      k.status_ = status_from_name(j.value("compile_status", "unknown"));
      k.failure_log_ = j.value("failure_log", "");
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("corpus record: ") + e.what());
    }
    if (k.source.empty()) throw DataError("corpus record " + k.id + " has empty source");
    return k;
  }

 private:
  CompileStatus status_ = CompileStatus::Unknown;
  std::string failure_log_;
};

// Append-only JSONL log. Each record is flushed before append() returns.
class RawLog {
 public:
  explicit RawLog(const std::filesystem::path& path) : out_(path, std::ios::app | std::ios::binary) {
    if (!out_) throw ConfigError("cannot open log " + path.string());
  }

  void append(const nlohmann::json& record) {
    std::lock_guard lock(mu_);
    out_ << record.dump() << '\n';
    out_.flush();
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
};

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

class HarvestError : public Error {
 public:
  HarvestError(ChatError::Kind kind, PromptJob job, const std::string& what, int retries)
      : Error(what), kind_(kind), job_(std::move(job)), retries_(retries) {}

  ChatError::Kind kind() const noexcept { return kind_; }
  const PromptJob& job() const noexcept { return job_; }
  int retries() const noexcept { return retries_; }

 private:
  ChatError::Kind kind_;
  PromptJob job_;
  int retries_;
};

struct HarvestOptions {
  std::size_t concurrency = 4;
  RawLog* log = nullptr;
  bool abort_on_auth = true;  // a rejected key fails every job, so stop early
};

struct HarvestResult {
  std::vector<HarvestedKernel> kernels;  // in job order
  std::vector<HarvestError> errors;
  std::size_t skipped = 0;  // jobs never attempted after an abort
};

inline HarvestResult harvest(const std::vector<PromptJob>& jobs, const ChatClient& client,
                             const HarvestOptions& options = {}) {
  std::vector<std::optional<HarvestedKernel>> done(jobs.size());
  std::vector<std::optional<HarvestError>> failed(jobs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};

  auto log = [&](const PromptJob& job, nlohmann::ordered_json rec) {
    if (!options.log) return;
    rec["job"] = job.to_json();
    options.log->append(rec);
  };

  auto worker = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= jobs.size() || abort.load()) return;
      const auto& job = jobs[i];
      const auto prompt = build_prompt(job);
      const auto stamp = utc_timestamp();
      try {
        auto r = client.complete({{"system", prompt.system}, {"user", prompt.user}}, job.temperature,
                                 job.model);
        // stored raw before any stripping
        log(job, {{"timestamp", stamp}, {"outcome", "ok"}, {"retries", r.retries},
                  {"retry_log", r.retry_log}, {"content", r.content}, {"body", r.raw_body}});
        HarvestedKernel k;
        k.source = strip_fences(r.content);
        k.job = job;
        if (k.job.model.empty()) k.job.model = client.endpoint().model;
        k.timestamp = stamp;
        k.retries = r.retries;
        k.retry_log = r.retry_log;
        if (k.source.empty()) {
          failed[i].emplace(ChatError::Kind::Malformed, job, "completion contained no source", r.retries);
          continue;
        }
        k.id = "ai-" + source::hex64(source::fnv1a64(k.job.tag + '\n' + k.source));
        done[i] = std::move(k);
      } catch (const ChatError& e) {
        log(job, {{"timestamp", stamp}, {"outcome", "error"}, {"error_kind", chat_error_kind_name(e.kind())},
                  {"message", e.what()}, {"retries", e.retries()}, {"body", e.body()}});
        failed[i].emplace(e.kind(), job, e.what(), e.retries());
        if (e.kind() == ChatError::Kind::Auth && options.abort_on_auth) abort = true;
      }
    }
  };

  const std::size_t n = std::max<std::size_t>(1, std::min(options.concurrency, jobs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  HarvestResult out;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (done[i]) {
      out.kernels.push_back(std::move(*done[i]));
    } else if (failed[i]) {
      out.errors.push_back(std::move(*failed[i]));
    } else {
      ++out.skipped;
    }
  }
  return out;
}

struct FilterReport {
  std::vector<HarvestedKernel> kept;
  std::vector<HarvestedKernel> excluded;
  bool skipped = false;
  std::size_t compiled = 0;  // compiler invocations made by this call
  std::string note;

  double exclusion_rate() const {
    const auto total = kept.size() + excluded.size();
    return total == 0 ? 0.0 : static_cast<double>(excluded.size()) / static_cast<double>(total);
  }

  nlohmann::ordered_json summary() const {
    return {{"kept", kept.size()},
            {"excluded", excluded.size()},
            {"exclusion_rate", exclusion_rate()},
            {"skipped", skipped},
            {"compiled", compiled},
            {"note", note}};
  }
};

struct FilterOptions {
  std::size_t parallelism = 1;
  std::string file_name = "kernel.hip";
};

// Compiles each unknown-status kernel in its own scratch directory. The template must contain
// {src}; {dir} and {out} are optional. Runtime/profiling failures are not detected here.
inline FilterReport compile_filter(std::vector<HarvestedKernel> kernels,
                                   const std::string& command_template,
                                   const FilterOptions& options = {}) {
  if (command_template.find("{src}") == std::string::npos) {
    throw ConfigError("compile command template must contain {src}");
  }
  FilterReport report;
  const auto program = command_program(command_template);
  if (!command_available(program)) {
    report.skipped = true;
    report.note = "filter skipped: compiler '" + program + "' not found";
    report.kept = std::move(kernels);
    return report;
  }
  report.note = "compile failures only; failures at profiling time are not checked";

  std::atomic<std::size_t> next{0}, compiled{0};
  auto worker = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= kernels.size()) return;
      auto& k = kernels[i];
      if (k.status() != CompileStatus::Unknown) continue;
      ScratchDir dir("counterlens-cc");
      const auto src = dir.path() / options.file_name;
      std::ofstream(src, std::ios::binary) << k.source;
      auto cmd = substitute(command_template, "src", shell_quote(src.string()));
      cmd = substitute(cmd, "dir", shell_quote(dir.path().string()));
      cmd = substitute(cmd, "out", shell_quote((dir.path() / "kernel.out").string()));
      const auto r = run_command(cmd, dir.path());
      compiled++;
      if (r.exit_code == 0) {
        k.set_status(CompileStatus::Ok);
      } else {
        k.set_status(CompileStatus::Failed, r.output);
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(options.parallelism, kernels.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  report.compiled = compiled;
  for (auto& k : kernels) {
    (k.status() == CompileStatus::Failed ? report.excluded : report.kept).push_back(std::move(k));
  }
  return report;
}

}  // namespace counterlens

#pragma once
// Running external tools (compilers) in isolated scratch directories.

#include <sys/wait.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "counterlens/errors.hpp"

namespace counterlens {

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

// Single-quotes a word for /bin/sh.
inline std::string shell_quote(std::string_view word) {
  std::string out = "'";
  for (char c : word) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

// True if `program` is an executable path or can be found on PATH.
inline bool command_available(const std::string& program) {
  namespace fs = std::filesystem;
  if (program.empty()) return false;
  auto executable = [](const fs::path& p) {
    std::error_code ec;
    const auto st = fs::status(p, ec);
    return !ec && fs::is_regular_file(st) &&
           (st.permissions() & (fs::perms::owner_exec | fs::perms::group_exec |
                                fs::perms::others_exec)) != fs::perms::none;
  };
  if (program.find('/') != std::string::npos) return executable(program);
  const char* path = std::getenv("PATH");
  if (!path) return false;
  std::stringstream dirs(path);
  std::string dir;
  while (std::getline(dirs, dir, ':')) {
    if (!dir.empty() && executable(fs::path(dir) / program)) return true;
  }
  return false;
}

// First whitespace-delimited word of a command line.
inline std::string command_program(std::string_view command) {
  const auto begin = command.find_first_not_of(" \t");
  if (begin == std::string_view::npos) return {};
  const auto end = command.find_first_of(" \t", begin);
  return std::string(command.substr(begin, end == std::string_view::npos ? end : end - begin));
}

// Runs `command` through /bin/sh inside `workdir`, capturing combined output.
inline CommandResult run_command(const std::string& command, const std::filesystem::path& workdir) {
  const auto log = workdir / ".command.log";
  const std::string line = "cd " + shell_quote(workdir.string()) + " && ( " + command + " ) > " +
                           shell_quote(log.string()) + " 2>&1";
  const int status = std::system(line.c_str());
  CommandResult r;
  if (status == -1) {
    r.output = "failed to spawn /bin/sh";
    return r;
  }
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  std::ifstream in(log, std::ios::binary);
  std::ostringstream text;
  text << in.rdbuf();
  r.output = text.str();
  return r;
}

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(std::string_view prefix = "counterlens") {
    static std::atomic<unsigned long> counter{0};
    std::random_device rd;
    const auto base = std::filesystem::temp_directory_path();
    for (int attempt = 0; attempt < 100; ++attempt) {
      auto candidate = base / (std::string(prefix) + "-" + std::to_string(rd()) + "-" +
                               std::to_string(counter++));
      std::error_code ec;
      if (std::filesystem::create_directory(candidate, ec)) {
        path_ = candidate;
        return;
      }
    }
    throw Error("could not create a scratch directory under " + base.string());
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

// Replaces every `{name}` with its value.
inline std::string substitute(std::string text, std::string_view name, std::string_view value) {
  const std::string key = "{" + std::string(name) + "}";
  for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
    text.replace(pos, key.size(), value);
  }
  return text;
}

}  // namespace counterlens

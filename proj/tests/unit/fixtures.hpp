#pragma once

#include <fstream>
#include <sstream>
#include <string>

namespace counterlens::testing {

inline std::string fixture_path(const std::string& name) {
  return std::string(COUNTERLENS_FIXTURES) + "/" + name;
}

inline std::string read_fixture(const std::string& name) {
  std::ifstream in(fixture_path(name), std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace counterlens::testing

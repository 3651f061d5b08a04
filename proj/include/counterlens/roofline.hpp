#pragma once

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "counterlens/errors.hpp"
#include "counterlens/metrics.hpp"

namespace counterlens {

enum class MemoryLevel { L1, L2, HBM };

inline constexpr std::array<MemoryLevel, 3> kMemoryLevels = {MemoryLevel::L1, MemoryLevel::L2,
                                                             MemoryLevel::HBM};

constexpr std::string_view level_name(MemoryLevel level) noexcept {
  switch (level) {
    case MemoryLevel::L1: return "L1";
    case MemoryLevel::L2: return "L2";
    case MemoryLevel::HBM: return "HBM";
  }
  return "?";
}

inline std::optional<MemoryLevel> level_from_name(std::string_view name) noexcept {
  for (auto level : kMemoryLevels) {
    if (level_name(level) == name) return level;
  }
  return std::nullopt;
}

struct RooflinePoint {
  MemoryLevel level = MemoryLevel::HBM;
  double arithmetic_intensity = 0.0;  // FLOPs/Byte
  double gflops = 0.0;

  friend bool operator==(const RooflinePoint&, const RooflinePoint&) = default;
};

struct MachinePeaks {
  std::string architecture;
  double peak_gflops = 0.0;
  std::map<MemoryLevel, double> bandwidth_gbs;

  void validate() const {
    if (!(peak_gflops > 0.0) || !std::isfinite(peak_gflops)) {
      throw ConfigError("peak compute for " + architecture + " must be positive");
    }
    for (const auto& [level, bw] : bandwidth_gbs) {
      if (!(bw > 0.0) || !std::isfinite(bw)) {
        throw ConfigError("peak " + std::string(level_name(level)) + " bandwidth for " +
                          architecture + " must be positive");
      }
    }
  }

  double bandwidth(MemoryLevel level) const {
    auto it = bandwidth_gbs.find(level);
    if (it == bandwidth_gbs.end()) {
      throw ConfigError("no " + std::string(level_name(level)) + " bandwidth peak for " +
                        architecture);
    }
    return it->second;
  }

  nlohmann::json to_json() const {
    nlohmann::json bw = nlohmann::json::object();
    for (const auto& [level, v] : bandwidth_gbs) bw[std::string(level_name(level))] = v;
    return {{"architecture", architecture}, {"peak_gflops", peak_gflops}, {"bandwidth_gbs", bw}};
  }

  static MachinePeaks from_json(const nlohmann::json& doc) {
    MachinePeaks p;
    try {
      p.architecture = doc.at("architecture").get<std::string>();
      p.peak_gflops = doc.at("peak_gflops").get<double>();
      for (const auto& [name, v] : doc.at("bandwidth_gbs").items()) {
        auto level = level_from_name(name);
        if (!level) throw ConfigError("unknown memory level '" + name + "'");
        p.bandwidth_gbs[*level] = v.get<double>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("machine peaks: ") + e.what());
    }
    p.validate();
    return p;
  }
};

// Illustrative per-GCD peaks; compute peaks are capped at the GFLOP/s normalization ceiling
// so that oracle labels always normalize.
inline std::vector<MachinePeaks> shipped_peaks() {
  return {
      {"gfx90a", 12288.0,
       {{MemoryLevel::L1, 12288.0}, {MemoryLevel::L2, 6963.2}, {MemoryLevel::HBM, 1638.4}}},
      {"gfx942", 12288.0,
       {{MemoryLevel::L1, 16384.0}, {MemoryLevel::L2, 14745.6}, {MemoryLevel::HBM, 5300.0}}},
  };
}

inline std::optional<MachinePeaks> find_peaks(std::string_view architecture) {
  for (auto& p : shipped_peaks()) {
    if (p.architecture == architecture) return p;
  }
  return std::nullopt;
}

inline double arithmetic_intensity(double flops, double bytes) {
  if (!(bytes > 0.0)) throw DomainError("arithmetic intensity needs a positive byte count");
  if (flops < 0.0) throw DomainError("negative FLOP count");
  return flops / bytes;
}

// Roofline ceiling: min(peak compute, ai * peak bandwidth at the level).
inline double attainable_performance(const MachinePeaks& peaks, MemoryLevel level, double ai) {
  if (!(ai >= 0.0)) throw DomainError("arithmetic intensity must be non-negative");
  const double bw = peaks.bandwidth(level);
  if (std::isinf(ai)) return peaks.peak_gflops;
  return std::min(peaks.peak_gflops, ai * bw);
}

inline MetricId ai_metric(MemoryLevel level) noexcept {
  switch (level) {
    case MemoryLevel::L1: return MetricId::L1_Cache_Arithmetic_Intensity;
    case MemoryLevel::L2: return MetricId::L2_Cache_Arithmetic_Intensity;
    case MemoryLevel::HBM: break;
  }
  return MetricId::HBM_Arithmetic_Intensity;
}

inline MetricId gflops_metric(MemoryLevel level) noexcept {
  switch (level) {
    case MemoryLevel::L1: return MetricId::L1_Cache_GFLOPS;
    case MemoryLevel::L2: return MetricId::L2_Cache_GFLOPS;
    case MemoryLevel::HBM: break;
  }
  return MetricId::HBM_GFLOPS;
}

// One point per level whose AI and GFLOP/s are both present.
inline std::vector<RooflinePoint> roofline_points(const CounterVector& physical) {
  std::vector<RooflinePoint> points;
  for (auto level : kMemoryLevels) {
    auto ai = physical.get(ai_metric(level));
    auto gf = physical.get(gflops_metric(level));
    if (ai && gf) points.push_back({level, *ai, *gf});
  }
  return points;
}

}  // namespace counterlens

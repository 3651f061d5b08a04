#pragma once
// Metric vocabulary, normalization ranges and the normalize/denormalize math.

#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include "json.hpp"

#include "counterlens/errors.hpp"

namespace counterlens {

// Declaration order is the wire order of the serialized counter block.
enum class MetricId : std::size_t {
  L1_Cache_Arithmetic_Intensity,
  L2_Cache_Arithmetic_Intensity,
  HBM_Arithmetic_Intensity,
  L1_Cache_GFLOPS,
  L2_Cache_GFLOPS,
  HBM_GFLOPS,
  L1_Cache_Bandwidth,
  L2_Cache_Bandwidth,
  L2_Fabric_Write_BW,
  L2_Fabric_Read_BW,
  L1_Cache_Hit_Rate,
  L2_Cache_Hit_Rate,
};

inline constexpr std::size_t kMetricCount = 12;

// One unit constant for bytes and FLOPs everywhere: GB/s and GFLOP/s are decimal.
inline constexpr double kGiga = 1e9;

inline constexpr std::array<MetricId, kMetricCount> kAllMetrics = {
    MetricId::L1_Cache_Arithmetic_Intensity, MetricId::L2_Cache_Arithmetic_Intensity,
    MetricId::HBM_Arithmetic_Intensity,      MetricId::L1_Cache_GFLOPS,
    MetricId::L2_Cache_GFLOPS,               MetricId::HBM_GFLOPS,
    MetricId::L1_Cache_Bandwidth,            MetricId::L2_Cache_Bandwidth,
    MetricId::L2_Fabric_Write_BW,            MetricId::L2_Fabric_Read_BW,
    MetricId::L1_Cache_Hit_Rate,             MetricId::L2_Cache_Hit_Rate,
};

// String-valued configuration tags that lead the serialized block.
inline constexpr std::string_view kCompilerFlagsKey = "compiler_flags";
inline constexpr std::string_view kArchitectureKey = "architecture";

enum class MetricKind { HitRate, Bandwidth, ArithmeticIntensity, Throughput };

struct MetricInfo {
  std::string_view key;
  std::string_view display_name;
  std::string_view unit;
  MetricKind kind;
};

inline constexpr std::array<MetricInfo, kMetricCount> kMetricInfo = {{
    {"L1_Cache_Arithmetic_Intensity", "L1 Arithmetic Intensity", "FLOPs/Byte",
     MetricKind::ArithmeticIntensity},
    {"L2_Cache_Arithmetic_Intensity", "L2 Arithmetic Intensity", "FLOPs/Byte",
     MetricKind::ArithmeticIntensity},
    {"HBM_Arithmetic_Intensity", "HBM Arithmetic Intensity", "FLOPs/Byte",
     MetricKind::ArithmeticIntensity},
    {"L1_Cache_GFLOPS", "L1 GFLOP/s", "GFLOP/s", MetricKind::Throughput},
    {"L2_Cache_GFLOPS", "L2 GFLOP/s", "GFLOP/s", MetricKind::Throughput},
    {"HBM_GFLOPS", "HBM GFLOP/s", "GFLOP/s", MetricKind::Throughput},
    {"L1_Cache_Bandwidth", "L1 Cache Bandwidth", "GB/s", MetricKind::Bandwidth},
    {"L2_Cache_Bandwidth", "L2 Cache Bandwidth", "GB/s", MetricKind::Bandwidth},
    {"L2_Fabric_Write_BW", "HBM Write Bandwidth", "GB/s", MetricKind::Bandwidth},
    {"L2_Fabric_Read_BW", "HBM Read Bandwidth", "GB/s", MetricKind::Bandwidth},
    {"L1_Cache_Hit_Rate", "L1 Cache Hit Rate", "%", MetricKind::HitRate},
    {"L2_Cache_Hit_Rate", "L2 Cache Hit Rate", "%", MetricKind::HitRate},
}};

constexpr std::size_t index_of(MetricId id) noexcept { return static_cast<std::size_t>(id); }
constexpr const MetricInfo& info(MetricId id) noexcept { return kMetricInfo[index_of(id)]; }
constexpr std::string_view metric_key(MetricId id) noexcept { return info(id).key; }

inline std::optional<MetricId> metric_from_key(std::string_view key) noexcept {
  for (auto id : kAllMetrics) {
    if (metric_key(id) == key) return id;
  }
  return std::nullopt;
}

struct PhysicalUnits {};
struct UnitInterval {};

// Sparse per-metric table. The tag keeps physical and normalized values apart.
template <class Tag>
class MetricValues {
 public:
  MetricValues() = default;

  bool has(MetricId id) const noexcept { return values_[index_of(id)].has_value(); }
  std::optional<double> get(MetricId id) const noexcept { return values_[index_of(id)]; }

  double at(MetricId id) const {
    const auto& v = values_[index_of(id)];
    if (!v) throw DataError("metric " + std::string(metric_key(id)) + " is absent");
    return *v;
  }

  void set(MetricId id, double value) {
    if (!std::isfinite(value)) {
      throw DataError("non-finite value for " + std::string(metric_key(id)));
    }
    if constexpr (std::is_same_v<Tag, PhysicalUnits>) {
      if (value < 0.0) throw DataError("negative value for " + std::string(metric_key(id)));
    }
    values_[index_of(id)] = value;
  }

  void erase(MetricId id) noexcept { values_[index_of(id)].reset(); }

  std::size_t size() const noexcept {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.has_value() ? 1 : 0;
    return n;
  }

  bool complete() const noexcept { return size() == kMetricCount; }

  friend bool operator==(const MetricValues&, const MetricValues&) = default;

 private:
  std::array<std::optional<double>, kMetricCount> values_{};
};

using CounterVector = MetricValues<PhysicalUnits>;
using NormalizedCounters = MetricValues<UnitInterval>;

struct MetricRange {
  double floor = 0.0;
  double ceiling = 1.0;
  std::string unit;

  double span() const noexcept { return ceiling - floor; }
};

// Values above a ceiling by at most this fraction are clamped, larger overshoots are errors.
inline constexpr double kCeilingClampTolerance = 0.001;

class NormRanges {
 public:
  static constexpr int kSchemaVersion = 1;

  NormRanges() = default;

  static NormRanges defaults() {
    NormRanges r;
    for (auto id : kAllMetrics) {
      double ceiling = 0.0;
      switch (info(id).kind) {
        case MetricKind::HitRate: ceiling = 100.0; break;
        case MetricKind::Bandwidth: ceiling = 16384.0; break;
        case MetricKind::Throughput: ceiling = 12288.0; break;
        case MetricKind::ArithmeticIntensity:
          ceiling = id == MetricId::L2_Cache_Arithmetic_Intensity ? 5120.0 : 2048.0;
          break;
      }
      r.set(id, MetricRange{0.0, ceiling, std::string(info(id).unit)});
    }
    return r;
  }

  void set(MetricId id, MetricRange range) {
    if (!(range.floor >= 0.0) || !(range.ceiling > range.floor) || !std::isfinite(range.ceiling)) {
      throw ConfigError("invalid range for " + std::string(metric_key(id)) +
                        ": need ceiling > floor >= 0");
    }
    ranges_[index_of(id)] = std::move(range);
  }

  bool has(MetricId id) const noexcept { return ranges_[index_of(id)].has_value(); }

  const MetricRange& at(MetricId id) const {
    const auto& r = ranges_[index_of(id)];
    if (!r) throw ConfigError("no normalization range for " + std::string(metric_key(id)));
    return *r;
  }

  bool complete() const noexcept {
    for (const auto& r : ranges_) {
      if (!r) return false;
    }
    return true;
  }

  // {"version": 1, "metrics": [{"id", "floor", "ceiling", "unit"}, ...]}
  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json metrics = nlohmann::ordered_json::array();
    for (auto id : kAllMetrics) {
      if (!has(id)) continue;
      const auto& r = at(id);
      metrics.push_back({{"id", metric_key(id)}, {"floor", r.floor}, {"ceiling", r.ceiling},
                         {"unit", r.unit}});
    }
    return {{"version", kSchemaVersion}, {"metrics", metrics}};
  }

  static NormRanges from_json(const nlohmann::json& doc) {
    if (!doc.is_object() || !doc.contains("metrics") || !doc["metrics"].is_array()) {
      throw ConfigError("range configuration needs a 'metrics' array");
    }
    if (doc.value("version", kSchemaVersion) != kSchemaVersion) {
      throw ConfigError("unsupported range configuration version");
    }
    NormRanges r;
    for (const auto& rec : doc["metrics"]) {
      const auto key = rec.value("id", std::string{});
      auto id = metric_from_key(key);
      if (!id) throw ConfigError("unknown metric id '" + key + "' in range configuration");
      if (!rec.contains("floor") || !rec.contains("ceiling") || !rec["floor"].is_number() ||
          !rec["ceiling"].is_number()) {
        throw ConfigError("range for " + key + " needs numeric floor and ceiling");
      }
      r.set(*id, MetricRange{rec["floor"].get<double>(), rec["ceiling"].get<double>(),
                             rec.value("unit", std::string(info(*id).unit))});
    }
    return r;
  }

  // Metrics missing from the file keep their shipped defaults.
  static NormRanges load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open range configuration " + path);
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("range configuration " + path + ": " + e.what());
    }
    auto overrides = from_json(doc);
    auto r = defaults();
    for (auto id : kAllMetrics) {
      if (overrides.has(id)) r.set(id, overrides.at(id));
    }
    return r;
  }

 private:
  std::array<std::optional<MetricRange>, kMetricCount> ranges_{};
};

// Rounds to the 3-decimal grid, ties to even.
inline long quantum_count(double unit_value) {
  return static_cast<long>(std::nearbyint(unit_value * 1000.0));
}

inline double quantize(double unit_value) {
  return static_cast<double>(quantum_count(unit_value)) / 1000.0;
}

// "0.500" style rendering of a unit-interval value.
inline std::string format_unit_value(double unit_value) {
  const long q = quantum_count(unit_value);
  if (q < 0 || q > 1000) throw DomainError("value outside [0, 1]: " + std::to_string(unit_value));
  std::string frac = std::to_string(q % 1000);
  return std::to_string(q / 1000) + "." + std::string(3 - frac.size(), '0') + frac;
}

// Accepts plain decimal text ("0.370", "1", ".5"); nullopt otherwise.
inline std::optional<double> parse_decimal(std::string_view text) {
  if (text.empty()) return std::nullopt;
  bool digits = false;
  bool dot = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c >= '0' && c <= '9') {
      digits = true;
    } else if (c == '.' && !dot) {
      dot = true;
    } else if ((c == '-' || c == '+') && i == 0) {
    } else {
      return std::nullopt;
    }
  }
  if (!digits) return std::nullopt;
  std::istringstream in{std::string(text)};
  in.imbue(std::locale::classic());
  double v = 0.0;
  in >> v;
  if (in.fail()) return std::nullopt;
  return v;
}

inline NormalizedCounters normalize(const CounterVector& raw, const NormRanges& ranges) {
  NormalizedCounters out;
  for (auto id : kAllMetrics) {
    auto value = raw.get(id);
    if (!value) continue;
    const auto& r = ranges.at(id);
    double v = *value;
    if (v < r.floor) throw RangeViolation(std::string(metric_key(id)), v, r.floor, r.ceiling);
    if (v > r.ceiling) {
      if (v > r.ceiling + kCeilingClampTolerance * r.ceiling) {
        throw RangeViolation(std::string(metric_key(id)), v, r.floor, r.ceiling);
      }
      v = r.ceiling;
    }
    out.set(id, (v - r.floor) / r.span());
  }
  return out;
}

inline CounterVector denormalize(const NormalizedCounters& norm, const NormRanges& ranges) {
  CounterVector out;
  for (auto id : kAllMetrics) {
    auto value = norm.get(id);
    if (!value) continue;
    if (*value < 0.0 || *value > 1.0) {
      throw ValidationError(std::string(metric_key(id)),
                            "normalized value " + std::to_string(*value) + " for " +
                                std::string(metric_key(id)) + " outside [0, 1]");
    }
    const auto& r = ranges.at(id);
    out.set(id, r.floor + *value * r.span());
  }
  return out;
}

// Snap every value onto the 3-decimal grid, as serialization would.
inline NormalizedCounters quantize(const NormalizedCounters& norm) {
  NormalizedCounters out;
  for (auto id : kAllMetrics) {
    if (auto v = norm.get(id)) out.set(id, quantize(*v));
  }
  return out;
}

// The serialized counter block: 14 keys, string values, fixed order, one key per line.
// The blank line after the opening brace is part of the published layout.
inline std::string serialize_counter_block(const NormalizedCounters& norm,
                                           std::string_view compiler_flags,
                                           std::string_view architecture) {
  if (!norm.complete()) throw DataError("counter block needs all 12 metrics");
  auto quoted = [](std::string_view s) { return nlohmann::json(std::string(s)).dump(); };
  std::string out = "{\n\n";
  out += quoted(kCompilerFlagsKey) + ": " + quoted(compiler_flags) + ",\n";
  out += quoted(kArchitectureKey) + ": " + quoted(architecture);
  for (auto id : kAllMetrics) {
    out += ",\n" + quoted(metric_key(id)) + ": \"" + format_unit_value(norm.at(id)) + "\"";
  }
  out += "\n}";
  return out;
}

}  // namespace counterlens

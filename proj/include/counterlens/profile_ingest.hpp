#pragma once
// Ingestion of externally collected profiler records (CSV / JSON lines), derivation of the
// twelve metrics from low-level counters, and flag x architecture build-job expansion.
//
// The low-level schema is a reconstruction: profilers expose many raw counters and the
// mapping from those to the columns below is the collector's job.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "counterlens/errors.hpp"
#include "counterlens/metrics.hpp"
#include "counterlens/roofline.hpp"

namespace counterlens {

struct BuildConfig {
  std::string architecture;
  std::vector<std::string> compiler_flags;
  std::string toolkit;

  std::string flags_string() const {
    std::string out;
    for (const auto& f : compiler_flags) {
      if (!out.empty()) out += ' ';
      out += f;
    }
    return out;
  }

  static std::vector<std::string> split_flags(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
  }

  nlohmann::ordered_json to_json() const {
    return {{"architecture", architecture}, {"compiler_flags", compiler_flags}, {"toolkit", toolkit}};
  }

  static BuildConfig from_json(const nlohmann::json& j) {
    BuildConfig c;
    c.architecture = j.value("architecture", "");
    if (j.contains("compiler_flags")) {
      const auto& f = j["compiler_flags"];
      c.compiler_flags = f.is_string() ? split_flags(f.get<std::string>())
                                       : f.get<std::vector<std::string>>();
    }
    c.toolkit = j.value("toolkit", "");
    if (c.architecture.empty()) throw DataError("build config without architecture");
    return c;
  }

  friend bool operator==(const BuildConfig&, const BuildConfig&) = default;
};

struct LowLevelCounters {
  double flops = 0.0;
  double duration_s = 0.0;  // profiler-reported kernel time
  std::optional<double> l1_bytes, l2_bytes, hbm_bytes;
  std::optional<double> hbm_read_bytes, hbm_write_bytes;
  std::optional<double> l1_requests, l1_hits, l2_requests, l2_hits;
};

struct ProfileRecord {
  std::size_t row = 0;  // 1-based data row (header excluded)
  std::string kernel;
  std::string fingerprint;
  BuildConfig config;
  std::optional<LowLevelCounters> counters;
  std::optional<CounterVector> derived;

  bool pre_derived() const noexcept { return !counters && derived; }
};

// Record fields a file column can be mapped to.
inline const std::vector<std::string>& ingest_fields() {
  static const std::vector<std::string> fields = [] {
    std::vector<std::string> f = {"kernel",         "fingerprint",     "architecture",
                                  "compiler_flags", "toolkit",         "flops",
                                  "duration_s",     "l1_bytes",        "l2_bytes",
                                  "hbm_bytes",      "hbm_read_bytes",  "hbm_write_bytes",
                                  "l1_requests",    "l1_hits",         "l2_requests",
                                  "l2_hits"};
    for (auto id : kAllMetrics) f.emplace_back(metric_key(id));
    return f;
  }();
  return fields;
}

// file column -> record field. Columns not in the map must already be field names.
struct SchemaMapping {
  std::map<std::string, std::string> columns;

  std::string field_for(const std::string& column) const {
    auto it = columns.find(column);
    const std::string& field = it == columns.end() ? column : it->second;
    const auto& known = ingest_fields();
    if (std::find(known.begin(), known.end(), field) == known.end()) {
      throw DataError("unknown column '" + column + "'");
    }
    return field;
  }

  static SchemaMapping from_json(const nlohmann::json& j) {
    SchemaMapping m;
    for (const auto& [col, field] : j.at("columns").items()) m.columns[col] = field.get<std::string>();
    const auto& known = ingest_fields();
    for (const auto& [col, field] : m.columns) {
      if (std::find(known.begin(), known.end(), field) == known.end()) {
        throw ConfigError("mapping targets unknown field '" + field + "'");
      }
    }
    return m;
  }
};

struct RowDiagnostic {
  std::size_t row = 0;
  std::string message;
};

struct IngestResult {
  std::vector<ProfileRecord> records;
  std::vector<RowDiagnostic> rejected;
};

// RFC 4180 style CSV: quoted fields may contain commas, doubled quotes and newlines.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw DataError("unterminated quoted CSV field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace detail {

inline double parse_number(const std::string& field, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw DataError("non-numeric value '" + text + "' for " + field);
  }
  if (used != text.size() || !std::isfinite(v)) {
    throw DataError("non-numeric value '" + text + "' for " + field);
  }
  if (v < 0.0) throw DataError("negative value for " + field);
  return v;
}

// Builds one record from field -> text. Throws DataError / RangeViolation on invalid rows.
inline ProfileRecord build_record(const std::map<std::string, std::string>& f,
                                  const NormRanges& ranges) {
  ProfileRecord r;
  auto text = [&](const char* name) -> std::optional<std::string> {
    auto it = f.find(name);
    if (it == f.end() || it->second.empty()) return std::nullopt;
    return it->second;
  };
  auto num = [&](const char* name) -> std::optional<double> {
    auto t = text(name);
    if (!t) return std::nullopt;
    return parse_number(name, *t);
  };

  r.kernel = text("kernel").value_or("");
  r.fingerprint = text("fingerprint").value_or("");
  if (r.kernel.empty() && r.fingerprint.empty()) throw DataError("row has neither kernel nor fingerprint");
  r.config.architecture = text("architecture").value_or("");
  if (r.config.architecture.empty()) throw DataError("missing architecture");
  r.config.compiler_flags = BuildConfig::split_flags(text("compiler_flags").value_or(""));
  r.config.toolkit = text("toolkit").value_or("");

  bool has_metric = false;
  CounterVector derived;
  for (auto id : kAllMetrics) {
    if (auto v = num(std::string(metric_key(id)).c_str())) {
      derived.set(id, *v);
      has_metric = true;
    }
  }
  const bool has_low = text("flops") || text("duration_s");
  if (has_metric && has_low) throw DataError("row mixes low-level counters and derived metrics");
  if (!has_metric && !has_low) throw DataError("row carries no counters");

  if (has_metric) {
    normalize(derived, ranges);  // range check under the clamp policy
    r.derived = derived;
    return r;
  }

  LowLevelCounters c;
  auto flops = num("flops");
  auto duration = num("duration_s");
  if (!flops) throw DataError("missing flops");
  if (!duration || !(*duration > 0.0)) throw DataError("duration_s must be > 0");
  c.flops = *flops;
  c.duration_s = *duration;
  c.l1_bytes = num("l1_bytes");
  c.l2_bytes = num("l2_bytes");
  c.hbm_bytes = num("hbm_bytes");
  c.hbm_read_bytes = num("hbm_read_bytes");
  c.hbm_write_bytes = num("hbm_write_bytes");
  c.l1_requests = num("l1_requests");
  c.l1_hits = num("l1_hits");
  c.l2_requests = num("l2_requests");
  c.l2_hits = num("l2_hits");
  if (c.l1_hits && c.l1_requests && *c.l1_hits > *c.l1_requests) throw DataError("l1_hits > l1_requests");
  if (c.l2_hits && c.l2_requests && *c.l2_hits > *c.l2_requests) throw DataError("l2_hits > l2_requests");
  r.counters = c;
  return r;
}

inline std::string json_cell(const nlohmann::json& v) {
  if (v.is_null()) return {};
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string out;
    for (const auto& e : v) {
      if (!out.empty()) out += ' ';
      out += e.is_string() ? e.get<std::string>() : e.dump();
    }
    return out;
  }
  return v.dump();
}

}  // namespace detail

// Reads a CSV (header row required) or a JSON-lines file. Each row becomes a record or a
// diagnostic; a header naming an unknown column fails the whole file.
inline IngestResult ingest(const std::filesystem::path& path, const SchemaMapping& mapping = {},
                           const NormRanges& ranges = NormRanges::defaults()) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto ext = path.extension().string();
  const bool jsonl = ext == ".jsonl" || ext == ".ndjson" || ext == ".json";

  IngestResult out;
  auto consume = [&](std::size_t row, const std::map<std::string, std::string>& fields) {
    try {
      auto rec = detail::build_record(fields, ranges);
      rec.row = row;
      out.records.push_back(std::move(rec));
    } catch (const RangeViolation& e) {
      out.rejected.push_back({row, e.what()});
    } catch (const DataError& e) {
      out.rejected.push_back({row, e.what()});
    }
  };

  if (jsonl) {
    std::istringstream lines(text);
    std::string line;
    std::size_t row = 0;
    while (std::getline(lines, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      ++row;
      std::map<std::string, std::string> fields;
      try {
        const auto doc = nlohmann::json::parse(line);
        if (!doc.is_object()) throw DataError("record is not an object");
        for (const auto& [k, v] : doc.items()) fields[mapping.field_for(k)] = detail::json_cell(v);
      } catch (const nlohmann::json::exception& e) {
        out.rejected.push_back({row, std::string("invalid JSON: ") + e.what()});
        continue;
      } catch (const DataError& e) {
        out.rejected.push_back({row, e.what()});
        continue;
      }
      consume(row, fields);
    }
    return out;
  }

  const auto rows = parse_csv(text);
  if (rows.empty()) return out;
  std::vector<std::string> header;
  for (const auto& col : rows.front()) header.push_back(mapping.field_for(col));
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != header.size()) {
      out.rejected.push_back({r, "expected " + std::to_string(header.size()) + " fields, got " +
                                     std::to_string(rows[r].size())});
      continue;
    }
    std::map<std::string, std::string> fields;
    for (std::size_t c = 0; c < header.size(); ++c) fields[header[c]] = rows[r][c];
    consume(r, fields);
  }
  return out;
}

// Per-level bandwidth, AI and throughput plus line-request hit rates. Levels without a byte
// count (or with zero bytes) leave their AI and bandwidth absent.
inline CounterVector derive_metrics(const ProfileRecord& record) {
  if (record.pre_derived()) return *record.derived;
  if (!record.counters) throw DataError("record has no low-level counters");
  const auto& c = *record.counters;
  if (!(c.duration_s > 0.0)) throw DataError("duration_s must be > 0");

  CounterVector out;
  const double gflops = c.flops / c.duration_s / kGiga;
  auto hbm = c.hbm_bytes;
  if (!hbm && c.hbm_read_bytes && c.hbm_write_bytes) hbm = *c.hbm_read_bytes + *c.hbm_write_bytes;
  const std::array<std::optional<double>, 3> bytes = {c.l1_bytes, c.l2_bytes, hbm};
  for (auto level : kMemoryLevels) {
    out.set(gflops_metric(level), gflops);
    const auto& b = bytes[static_cast<std::size_t>(level)];
    if (!b || !(*b > 0.0)) continue;
    out.set(ai_metric(level), arithmetic_intensity(c.flops, *b));
    if (level == MemoryLevel::L1) out.set(MetricId::L1_Cache_Bandwidth, *b / c.duration_s / kGiga);
    if (level == MemoryLevel::L2) out.set(MetricId::L2_Cache_Bandwidth, *b / c.duration_s / kGiga);
  }
  if (c.hbm_read_bytes) out.set(MetricId::L2_Fabric_Read_BW, *c.hbm_read_bytes / c.duration_s / kGiga);
  if (c.hbm_write_bytes) out.set(MetricId::L2_Fabric_Write_BW, *c.hbm_write_bytes / c.duration_s / kGiga);
  if (c.l1_requests && c.l1_hits && *c.l1_requests > 0) {
    out.set(MetricId::L1_Cache_Hit_Rate, *c.l1_hits / *c.l1_requests * 100.0);
  }
  if (c.l2_requests && c.l2_hits && *c.l2_requests > 0) {
    out.set(MetricId::L2_Cache_Hit_Rate, *c.l2_hits / *c.l2_requests * 100.0);
  }
  return out;
}

// Bandwidth of a level derived from low-level counters, for the AI x BW identity.
inline std::optional<double> level_bandwidth(const ProfileRecord& record, MemoryLevel level) {
  if (!record.counters) return std::nullopt;
  const auto& c = *record.counters;
  std::optional<double> b = level == MemoryLevel::L1   ? c.l1_bytes
                            : level == MemoryLevel::L2 ? c.l2_bytes
                                                       : c.hbm_bytes;
  if (!b && level == MemoryLevel::HBM && c.hbm_read_bytes && c.hbm_write_bytes) {
    b = *c.hbm_read_bytes + *c.hbm_write_bytes;
  }
  if (!b) return std::nullopt;
  return *b / c.duration_s / kGiga;
}

enum class Origin { Synthetic, Ai, Custom, Oracle };

inline std::string_view origin_name(Origin o) noexcept {
  switch (o) {
    case Origin::Synthetic: return "synthetic";
    case Origin::Ai: return "ai";
    case Origin::Custom: return "custom";
    case Origin::Oracle: return "oracle";
  }
  return "custom";
}

inline Origin origin_from_name(std::string_view name) {
  if (name == "synthetic") return Origin::Synthetic;
  if (name == "ai") return Origin::Ai;
  if (name == "custom") return Origin::Custom;
  if (name == "oracle") return Origin::Oracle;
  throw DataError("unknown origin '" + std::string(name) + "'");
}

struct LabeledSample {
  std::string source;
  BuildConfig config;
  CounterVector counters;
  Origin origin = Origin::Custom;
  std::string fingerprint;  // base kernel fingerprint, shared by rename and flag variants
};

struct KernelRef {
  std::string id;
  std::string fingerprint;
};

struct BuildJob {
  KernelRef kernel;
  BuildConfig config;

  nlohmann::ordered_json to_json() const {
    return {{"kernel", kernel.id},
            {"fingerprint", kernel.fingerprint},
            {"architecture", config.architecture},
            {"compiler_flags", config.compiler_flags},
            {"toolkit", config.toolkit}};
  }
};

// kernels x flag sets x architectures, in that nesting order. No flag sets means one empty set.
inline std::vector<BuildJob> expand_configs(const std::vector<KernelRef>& kernels,
                                            const std::vector<std::vector<std::string>>& flag_sets,
                                            const std::vector<std::string>& architectures,
                                            const std::string& toolkit = {}) {
  if (architectures.empty()) throw ConfigError("expand_configs needs at least one architecture");
  for (const auto& a : architectures) {
    if (a.empty()) throw ConfigError("empty architecture name");
  }
  const std::vector<std::vector<std::string>> sets =
      flag_sets.empty() ? std::vector<std::vector<std::string>>{{}} : flag_sets;
  std::vector<BuildJob> jobs;
  jobs.reserve(kernels.size() * sets.size() * architectures.size());
  for (const auto& k : kernels) {
    for (const auto& flags : sets) {
      for (const auto& arch : architectures) jobs.push_back({k, {arch, flags, toolkit}});
    }
  }
  return jobs;
}

// Writes `text` to `path` through a sibling temp file and rename.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_manifest(const std::vector<BuildJob>& jobs, const std::filesystem::path& path) {
  std::string text;
  for (const auto& j : jobs) text += j.to_json().dump() + "\n";
  write_file_atomic(path, text);
}

}  // namespace counterlens

#pragma once
// Synthetic kernel generator, variable-rename augmentation and the analytic streaming oracle.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "counterlens/errors.hpp"
#include "counterlens/kernel_analysis.hpp"
#include "counterlens/metrics.hpp"
#include "counterlens/random.hpp"
#include "counterlens/roofline.hpp"

namespace counterlens {

enum class DataType { Float32, Float64 };

constexpr std::string_view dtype_name(DataType t) noexcept {
  return t == DataType::Float32 ? "float32" : "float64";
}
constexpr std::string_view dtype_ctype(DataType t) noexcept {
  return t == DataType::Float32 ? "float" : "double";
}
constexpr std::size_t dtype_bytes(DataType t) noexcept { return t == DataType::Float32 ? 4 : 8; }

inline DataType dtype_from_name(std::string_view name) {
  if (name == "float32" || name == "float") return DataType::Float32;
  if (name == "float64" || name == "double") return DataType::Float64;
  throw ConfigError("unknown dtype '" + std::string(name) + "'");
}

enum class ComputeForm { Add, Sub, Mul, Div, FusedMulAdd };

constexpr std::string_view form_name(ComputeForm f) noexcept {
  switch (f) {
    case ComputeForm::Add: return "add";
    case ComputeForm::Sub: return "sub";
    case ComputeForm::Mul: return "mul";
    case ComputeForm::Div: return "div";
    case ComputeForm::FusedMulAdd: return "fma";
  }
  return "?";
}

inline ComputeForm form_from_name(std::string_view name) {
  for (auto f : {ComputeForm::Add, ComputeForm::Sub, ComputeForm::Mul, ComputeForm::Div,
                 ComputeForm::FusedMulAdd}) {
    if (form_name(f) == name) return f;
  }
  throw ConfigError("unknown compute form '" + std::string(name) + "'");
}

inline constexpr std::array<std::size_t, 5> kBlockSizes = {64, 128, 256, 512, 1024};

struct KernelGenSpec {
  std::size_t num_inputs = 1;
  std::size_t num_outputs = 1;
  std::size_t element_count = 102528;
  DataType dtype = DataType::Float64;
  std::size_t num_loads = 1;
  std::size_t num_stores = 1;
  std::size_t num_compute = 1;
  std::size_t block_size = 256;
  std::uint64_t seed = 0;
  // Operand recency skew: P(distance k) proportional to p (1-p)^k.
  double recency_p = 0.5;
  std::vector<ComputeForm> forms = {ComputeForm::Add, ComputeForm::Sub, ComputeForm::Mul,
                                    ComputeForm::FusedMulAdd};

  void validate() const {
    if (num_inputs < 1) throw GenerationError("num_inputs must be >= 1");
    if (num_outputs < 1) throw GenerationError("num_outputs must be >= 1");
    if (num_loads < 1) throw GenerationError("num_loads must be >= 1");
    if (num_stores < 1) throw GenerationError("num_stores must be >= 1");
    if (element_count < 1) throw GenerationError("element_count must be >= 1");
    if (std::find(kBlockSizes.begin(), kBlockSizes.end(), block_size) == kBlockSizes.end()) {
      throw GenerationError("block_size must be one of 64, 128, 256, 512, 1024");
    }
    if (!(recency_p > 0.0 && recency_p <= 1.0)) {
      throw GenerationError("recency_p must be in (0, 1]");
    }
    if (num_compute > 0 && forms.empty()) throw GenerationError("no compute forms enabled");
    // every store writes a distinct value
    if (num_stores > num_loads + num_compute) {
      throw GenerationError("unsatisfiable spec: " + std::to_string(num_stores) +
                            " stores need as many distinct values but only " +
                            std::to_string(num_loads + num_compute) + " are defined");
    }
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json f = nlohmann::ordered_json::array();
    for (auto form : forms) f.push_back(form_name(form));
    return {{"num_inputs", num_inputs},   {"num_outputs", num_outputs},
            {"element_count", element_count}, {"dtype", dtype_name(dtype)},
            {"num_loads", num_loads},     {"num_stores", num_stores},
            {"num_compute", num_compute}, {"block_size", block_size},
            {"seed", seed},               {"recency_p", recency_p},
            {"forms", f}};
  }

  // Missing fields keep their defaults.
  static KernelGenSpec from_json(const nlohmann::json& j) {
    KernelGenSpec s;
    try {
      s.num_inputs = j.value("num_inputs", s.num_inputs);
      s.num_outputs = j.value("num_outputs", s.num_outputs);
      s.element_count = j.value("element_count", s.element_count);
      if (j.contains("dtype")) s.dtype = dtype_from_name(j["dtype"].get<std::string>());
      s.num_loads = j.value("num_loads", s.num_loads);
      s.num_stores = j.value("num_stores", s.num_stores);
      s.num_compute = j.value("num_compute", s.num_compute);
      s.block_size = j.value("block_size", s.block_size);
      s.seed = j.value("seed", s.seed);
      s.recency_p = j.value("recency_p", s.recency_p);
      if (j.contains("forms")) {
        s.forms.clear();
        for (const auto& f : j["forms"]) s.forms.push_back(form_from_name(f.get<std::string>()));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("kernel spec: ") + e.what());
    }
    return s;
  }

  friend bool operator==(const KernelGenSpec&, const KernelGenSpec&) = default;
};

struct KernelMetadata {
  std::size_t flops_per_thread = 0;
  std::size_t bytes_loaded_per_thread = 0;
  std::size_t bytes_stored_per_thread = 0;
  std::size_t loads_per_thread = 0;
  std::size_t stores_per_thread = 0;
  std::uint64_t total_threads = 0;
  DataType dtype = DataType::Float64;
  std::array<std::uint64_t, 3> grid{1, 1, 1};
  std::array<std::uint64_t, 3> block{1, 1, 1};

  nlohmann::ordered_json to_json() const {
    return {{"flops_per_thread", flops_per_thread},
            {"bytes_loaded_per_thread", bytes_loaded_per_thread},
            {"bytes_stored_per_thread", bytes_stored_per_thread},
            {"loads_per_thread", loads_per_thread},
            {"stores_per_thread", stores_per_thread},
            {"total_threads", total_threads},
            {"dtype", dtype_name(dtype)},
            {"grid", grid},
            {"block", block}};
  }

  static KernelMetadata from_json(const nlohmann::json& j) {
    KernelMetadata m;
    try {
      m.flops_per_thread = j.at("flops_per_thread").get<std::size_t>();
      m.bytes_loaded_per_thread = j.at("bytes_loaded_per_thread").get<std::size_t>();
      m.bytes_stored_per_thread = j.at("bytes_stored_per_thread").get<std::size_t>();
      m.loads_per_thread = j.value("loads_per_thread", std::size_t{0});
      m.stores_per_thread = j.value("stores_per_thread", std::size_t{0});
      m.total_threads = j.at("total_threads").get<std::uint64_t>();
      m.dtype = dtype_from_name(j.at("dtype").get<std::string>());
      if (j.contains("grid")) m.grid = j["grid"].get<std::array<std::uint64_t, 3>>();
      if (j.contains("block")) m.block = j["block"].get<std::array<std::uint64_t, 3>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("kernel metadata: ") + e.what());
    }
    return m;
  }

  friend bool operator==(const KernelMetadata&, const KernelMetadata&) = default;
};

struct GeneratedKernel {
  std::string source;
  KernelMetadata metadata;
  KernelGenSpec spec;
  std::string fingerprint;
};

inline std::string fingerprint_of(std::string_view source_text) {
  return source::fingerprint(source::parse(source_text));
}

namespace detail {

struct ComputeStmt {
  std::vector<std::size_t> operands;  // indices into the value list
  ComputeForm form;
};

inline std::size_t form_flops(ComputeForm f) { return f == ComputeForm::FusedMulAdd ? 2 : 1; }

inline std::string form_expr(ComputeForm f, const std::vector<std::string>& ops) {
  switch (f) {
    case ComputeForm::Add: return ops[0] + " + " + ops[1];
    case ComputeForm::Sub: return ops[0] + " - " + ops[1];
    case ComputeForm::Mul: return ops[0] + " * " + ops[1];
    case ComputeForm::Div: return ops[0] + " / " + ops[1];
    case ComputeForm::FusedMulAdd: return ops[0] + " * " + ops[1] + " + " + ops[2];
  }
  return {};
}

}  // namespace detail

// Builds one self-contained HIP translation unit. Deterministic in the spec (seed included).
inline GeneratedKernel generate(const KernelGenSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::string ctype(dtype_ctype(spec.dtype));
  const std::size_t value_count = spec.num_loads + spec.num_compute;

  std::vector<std::string> names;
  std::vector<std::set<std::size_t>> deps(value_count);
  std::ostringstream body;
  body << "  auto thread_id = threadIdx.x + blockIdx.x * blockDim.x;\n";

  for (std::size_t i = 0; i < spec.num_loads; ++i) {
    const auto input = uniform_below(rng, spec.num_inputs);
    names.push_back("var_" + std::to_string(names.size()));
    body << "  auto " << names.back() << " = input_" << input << "[thread_id];\n";
  }

  std::size_t flops = 0;
  auto recent = [&](std::size_t available) {
    return available - 1 - truncated_geometric(rng, spec.recency_p, available);
  };
  for (std::size_t i = 0; i < spec.num_compute; ++i) {
    const auto form = spec.forms[uniform_below(rng, spec.forms.size())];
    const std::size_t arity = form == ComputeForm::FusedMulAdd ? 3 : 2;
    const std::size_t available = names.size();
    std::vector<std::string> ops;
    for (std::size_t k = 0; k < arity; ++k) {
      const auto idx = recent(available);
      deps[available].insert(idx);
      ops.push_back(names[idx]);
    }
    names.push_back("var_" + std::to_string(available));
    flops += detail::form_flops(form);
    body << "  auto " << names.back() << " = " << detail::form_expr(form, ops) << ";\n";
  }

  // Distinct stored values, drawn with the same recency skew.
  std::vector<std::size_t> pool(value_count);
  for (std::size_t i = 0; i < value_count; ++i) pool[i] = i;
  std::vector<std::size_t> stored;
  for (std::size_t i = 0; i < spec.num_stores; ++i) {
    const auto pick = pool.size() - 1 - truncated_geometric(rng, spec.recency_p, pool.size());
    stored.push_back(pool[pick]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }

  // Values no store depends on are folded into the final store expression.
  std::vector<bool> live(value_count, false);
  std::vector<std::size_t> work(stored.begin(), stored.end());
  while (!work.empty()) {
    const auto v = work.back();
    work.pop_back();
    if (live[v]) continue;
    live[v] = true;
    for (auto d : deps[v]) work.push_back(d);
  }
  std::vector<std::size_t> dead;
  for (std::size_t v = 0; v < value_count; ++v) {
    if (!live[v]) dead.push_back(v);
  }

  for (std::size_t i = 0; i < stored.size(); ++i) {
    const auto output = i < spec.num_outputs ? i : uniform_below(rng, spec.num_outputs);
    std::string value = names[stored[i]];
    if (i + 1 == stored.size()) {
      for (auto d : dead) {
        value += " + " + names[d];
        ++flops;
      }
    }
    body << "  output_" << output << "[thread_id] = " << value << ";\n";
  }

  const std::size_t num_blocks = (spec.element_count + spec.block_size - 1) / spec.block_size;

  std::ostringstream src;
  src << "#include <cstdint>\n"
         "#include <iostream>\n"
         "\n"
         "#include <hip/hip_runtime.h>\n"
         "#include <hip/hip_runtime_api.h>\n"
         "#include <thrust/device_vector.h>\n"
         "\n"
         "__global__ void generated_kernel(";
  for (std::size_t i = 0; i < spec.num_inputs; ++i) src << ctype << " *input_" << i << ", ";
  for (std::size_t i = 0; i < spec.num_outputs; ++i) {
    src << ctype << " *output_" << i << (i + 1 < spec.num_outputs ? ", " : "");
  }
  src << ") {\n" << body.str() << "}\n\n";
  src << "int main(int, char **) {\n";
  for (std::size_t i = 0; i < spec.num_inputs; ++i) {
    src << "  thrust::device_vector<" << ctype << "> input_" << i << "(" << spec.element_count
        << ", 1);\n";
  }
  for (std::size_t i = 0; i < spec.num_outputs; ++i) {
    src << "  thrust::device_vector<" << ctype << "> output_" << i << "(" << spec.element_count
        << ", 1);\n";
  }
  src << "\n"
      << "  std::size_t block_size{" << spec.block_size << "};\n"
      << "  std::size_t input_size{" << spec.element_count << "};\n"
      << "  std::size_t num_blocks{(input_size + block_size - 1) / block_size};\n"
      << "\n"
      << "  generated_kernel<<<num_blocks, block_size>>>(\n      ";
  for (std::size_t i = 0; i < spec.num_inputs; ++i) src << "input_" << i << ".data().get(), ";
  for (std::size_t i = 0; i < spec.num_outputs; ++i) {
    src << "output_" << i << ".data().get()" << (i + 1 < spec.num_outputs ? ", " : "");
  }
  src << ");\n"
      << "\n"
      << "  auto status = hipDeviceSynchronize();\n"
      << "  if (status != hipSuccess) {\n"
      << "    std::cout << \"kernel launch failed\\n\";\n"
      << "  }\n"
      << "}\n";

  GeneratedKernel k;
  k.source = src.str();
  k.spec = spec;
  const std::size_t elem = dtype_bytes(spec.dtype);
  k.metadata.flops_per_thread = flops;
  k.metadata.loads_per_thread = spec.num_loads;
  k.metadata.stores_per_thread = spec.num_stores;
  k.metadata.bytes_loaded_per_thread = spec.num_loads * elem;
  k.metadata.bytes_stored_per_thread = spec.num_stores * elem;
  k.metadata.total_threads = static_cast<std::uint64_t>(num_blocks) * spec.block_size;
  k.metadata.dtype = spec.dtype;
  k.metadata.grid = {num_blocks, 1, 1};
  k.metadata.block = {spec.block_size, 1, 1};
  k.fingerprint = fingerprint_of(k.source);
  return k;
}

// Sidecar record written next to each generated source file.
inline nlohmann::ordered_json sidecar_json(const GeneratedKernel& k, std::string_view file) {
  return {{"schema", "counterlens.kernel/1"},
          {"file", file},
          {"fingerprint", k.fingerprint},
          {"spec", k.spec.to_json()},
          {"metadata", k.metadata.to_json()}};
}

struct RenamedSource {
  std::string text;
  source::RenameMap map;
};

// Alpha-renames every user-declared variable. Throws ParseError on unparseable input.
inline RenamedSource rename_variables(std::string_view text, std::uint64_t seed) {
  const auto tokens = source::tokenize(text);
  const auto unit = source::Parser(tokens).parse_unit();
  RenamedSource out;
  out.map = source::RenameMap::build(source::declared_names(unit), seed, source::identifiers_in(tokens));
  out.text = source::apply_rename(text, tokens, out.map);
  return out;
}

inline GeneratedKernel rename_variables(const GeneratedKernel& kernel, std::uint64_t seed) {
  GeneratedKernel out = kernel;
  out.source = rename_variables(kernel.source, seed).text;
  out.fingerprint = fingerprint_of(out.source);
  return out;
}

// Reconstructs generator metadata from generator-language source: a single straight-line
// kernel launched once with constant launch geometry. Anything else is refused.
inline KernelMetadata metadata_from_source(std::string_view text) {
  auto report = source::validate_restricted(text);
  if (!report.ok) {
    const auto& d = report.diagnostics.front();
    throw OracleUnavailable("source is outside the generator language (" + std::to_string(d.line) +
                            ":" + std::to_string(d.column) + ": " + d.message + ")");
  }
  if (report.kernels.size() != 1) throw OracleUnavailable("oracle needs exactly one kernel");
  const auto& stats = report.kernels.front();
  if (stats.has_loop || stats.has_branch) {
    throw OracleUnavailable("oracle models straight-line streaming kernels only");
  }
  if (stats.element_type != source::Scalar::Float && stats.element_type != source::Scalar::Double) {
    throw OracleUnavailable("kernel has no floating-point buffers");
  }
  std::optional<source::LaunchInfo> launch;
  for (const auto& l : report.launches) {
    if (l.kernel != stats.name) continue;
    if (launch) throw OracleUnavailable("kernel launched more than once");
    launch = l;
  }
  if (!launch || !launch->grid || !launch->block || *launch->grid <= 0 || *launch->block <= 0) {
    throw OracleUnavailable("launch geometry of " + stats.name + " is not a compile-time constant");
  }
  KernelMetadata m;
  m.flops_per_thread = stats.flops;
  m.loads_per_thread = stats.loads;
  m.stores_per_thread = stats.stores;
  m.bytes_loaded_per_thread = stats.bytes_loaded;
  m.bytes_stored_per_thread = stats.bytes_stored;
  m.dtype = stats.element_type == source::Scalar::Float ? DataType::Float32 : DataType::Float64;
  m.grid = {static_cast<std::uint64_t>(*launch->grid), 1, 1};
  m.block = {static_cast<std::uint64_t>(*launch->block), 1, 1};
  m.total_threads = m.grid[0] * m.block[0];
  if (m.bytes_loaded_per_thread + m.bytes_stored_per_thread == 0) {
    throw OracleUnavailable("kernel moves no memory");
  }
  return m;
}

struct HitRates {
  double l1 = 50.0;
  double l2 = 0.0;
};

// Streaming cache model: hit rates keyed by (loads, stores) per thread, with a default.
// Each element is used once, so L2 sees no reuse; L1 serves half of the line requests of a
// read-modify-write stream.
struct StreamingCacheModel {
  HitRates fallback{50.0, 0.0};
  std::map<std::pair<std::size_t, std::size_t>, HitRates> table;

  HitRates lookup(std::size_t loads, std::size_t stores) const {
    auto it = table.find({loads, stores});
    return it == table.end() ? fallback : it->second;
  }
};

// Streaming roofline model: time = max(bytes / (eff * HBM BW), flops / (eff * peak compute)),
// the same traffic attributed to every level.
inline CounterVector oracle_counters(const KernelMetadata& m, const MachinePeaks& peaks,
                                     double efficiency, const StreamingCacheModel& cache = {}) {
  if (!(efficiency > 0.0 && efficiency <= 1.0)) {
    throw DomainError("efficiency must be in (0, 1]");
  }
  peaks.validate();
  const double threads = static_cast<double>(m.total_threads);
  const double loaded = threads * static_cast<double>(m.bytes_loaded_per_thread);
  const double stored = threads * static_cast<double>(m.bytes_stored_per_thread);
  const double bytes = loaded + stored;
  const double flops = threads * static_cast<double>(m.flops_per_thread);
  if (!(bytes > 0.0)) throw OracleUnavailable("kernel moves no memory");

  const double mem_time = bytes / (efficiency * peaks.bandwidth(MemoryLevel::HBM) * kGiga);
  const double compute_time = flops / (efficiency * peaks.peak_gflops * kGiga);
  const double time = std::max(mem_time, compute_time);

  const double ai = arithmetic_intensity(flops, bytes);
  const double gflops = flops / time / kGiga;
  const double bw = bytes / time / kGiga;
  const auto hits = cache.lookup(m.loads_per_thread, m.stores_per_thread);

  CounterVector c;
  c.set(MetricId::L1_Cache_Arithmetic_Intensity, ai);
  c.set(MetricId::L2_Cache_Arithmetic_Intensity, ai);
  c.set(MetricId::HBM_Arithmetic_Intensity, ai);
  c.set(MetricId::L1_Cache_GFLOPS, gflops);
  c.set(MetricId::L2_Cache_GFLOPS, gflops);
  c.set(MetricId::HBM_GFLOPS, gflops);
  c.set(MetricId::L1_Cache_Bandwidth, bw);
  c.set(MetricId::L2_Cache_Bandwidth, bw);
  c.set(MetricId::L2_Fabric_Read_BW, loaded / time / kGiga);
  c.set(MetricId::L2_Fabric_Write_BW, stored / time / kGiga);
  c.set(MetricId::L1_Cache_Hit_Rate, hits.l1);
  c.set(MetricId::L2_Cache_Hit_Rate, hits.l2);
  return c;
}

inline CounterVector oracle_counters(const GeneratedKernel& k, const MachinePeaks& peaks,
                                     double efficiency, const StreamingCacheModel& cache = {}) {
  return oracle_counters(k.metadata, peaks, efficiency, cache);
}

inline CounterVector oracle_counters(const std::optional<KernelMetadata>& m,
                                     const MachinePeaks& peaks, double efficiency,
                                     const StreamingCacheModel& cache = {}) {
  if (!m) throw OracleUnavailable("no generator metadata: arbitrary code cannot be oracled");
  return oracle_counters(*m, peaks, efficiency, cache);
}

}  // namespace counterlens

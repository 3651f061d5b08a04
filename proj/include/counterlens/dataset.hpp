#pragma once
// Chat-format training records, fingerprint-level splits, dataset files and export templates.

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "counterlens/errors.hpp"
#include "counterlens/extract.hpp"
#include "counterlens/histogram.hpp"
#include "counterlens/metrics.hpp"
#include "counterlens/profile_ingest.hpp"
#include "counterlens/random.hpp"

namespace counterlens {

inline constexpr std::string_view kPredictSystemPrompt =
    "You are an expert GPU programmer and profiler. Given a code, you will predict its "
    "performance counters.";

// The user turn, shared by dataset rendering and every prompting backend. Source bytes are kept
// verbatim.
inline std::string user_prompt(std::string_view architecture, std::string_view compiler_flags,
                               std::string_view source) {
  std::string out = "For the GPU architecture ";
  out += architecture;
  out += " and the compiler flags ";
  out += compiler_flags;
  out +=
      ", what are the bandwidth, arithmetic intensity, hit rates, flops of the following code? "
      "Output the answer in JSON format.\n\n";
  out += source;
  return out;
}

inline std::string assistant_text(std::string_view architecture, std::string_view compiler_flags,
                                  std::string_view counter_block) {
  std::string out = "Here are the performance counters for the ";
  out += architecture;
  out += " GPU architecture and the ";
  out += compiler_flags;
  out += " compiler flags combination in JSON format:\n\n```json\n";
  out += counter_block;
  out += "\n```";
  return out;
}

enum class Split { Unassigned, Train, Val, Test };

inline constexpr std::array<Split, 3> kSplits = {Split::Train, Split::Val, Split::Test};

inline std::string_view split_name(Split s) noexcept {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unassigned: return "unassigned";
  }
  return "unassigned";
}

inline Split split_from_name(std::string_view name) {
  for (auto s : kSplits) {
    if (split_name(s) == name) return s;
  }
  if (name == "unassigned") return Split::Unassigned;
  throw DataError("unknown split '" + std::string(name) + "'");
}

struct SampleMeta {
  std::string fingerprint;
  BuildConfig config;
  Origin origin = Origin::Custom;
  Split split = Split::Unassigned;

  friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
};

struct TrainingSample {
  std::string system;
  std::string user;
  std::string assistant;
  SampleMeta meta;

  nlohmann::ordered_json to_json() const {
    return {{"system", system},
            {"user", user},
            {"assistant", assistant},
            {"meta",
             {{"fingerprint", meta.fingerprint},
              {"architecture", meta.config.architecture},
              {"compiler_flags", meta.config.compiler_flags},
              {"toolkit", meta.config.toolkit},
              {"origin", origin_name(meta.origin)},
              {"split", split_name(meta.split)}}}};
  }

  static TrainingSample from_json(const nlohmann::json& j) {
    TrainingSample s;
    try {
      s.system = j.at("system").get<std::string>();
      s.user = j.at("user").get<std::string>();
      s.assistant = j.at("assistant").get<std::string>();
      const auto& m = j.at("meta");
      s.meta.fingerprint = m.value("fingerprint", "");
      s.meta.config = BuildConfig::from_json(m);
      s.meta.origin = origin_from_name(m.value("origin", "custom"));
      s.meta.split = split_from_name(m.value("split", "unassigned"));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("training record: ") + e.what());
    }
    return s;
  }

  friend bool operator==(const TrainingSample&, const TrainingSample&) = default;
};

inline TrainingSample render_sample(const LabeledSample& sample, const NormRanges& ranges) {
  const auto norm = normalize(sample.counters, ranges);
  const auto flags = sample.config.flags_string();
  const auto& arch = sample.config.architecture;
  TrainingSample t;
  t.system = std::string(kPredictSystemPrompt);
  t.user = user_prompt(arch, flags, sample.source);
  t.assistant = assistant_text(arch, flags, serialize_counter_block(norm, flags, arch));
  t.meta = {sample.fingerprint, sample.config, sample.origin, Split::Unassigned};
  return t;
}

// Ground-truth normalized counters stored in a rendered sample.
inline NormalizedCounters sample_counters(const TrainingSample& s) {
  return extract_json(s.assistant).normalized;
}

struct SplitParams {
  double train_ratio = 0.9;  // of what remains after the test reservation
  std::size_t test_count = 4000;
  std::uint64_t seed = 0;

  friend bool operator==(const SplitParams&, const SplitParams&) = default;
};

struct SplitManifest {
  SplitParams params;
  std::map<std::string, Split> assignment;  // fingerprint -> split

  Split split_of(const std::string& fingerprint) const {
    auto it = assignment.find(fingerprint);
    if (it == assignment.end()) throw DataError("fingerprint " + fingerprint + " has no split");
    return it->second;
  }

  std::map<Split, std::size_t> counts() const {
    std::map<Split, std::size_t> c{{Split::Train, 0}, {Split::Val, 0}, {Split::Test, 0}};
    for (const auto& [fp, s] : assignment) c[s]++;
    return c;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json a = nlohmann::ordered_json::object();
    for (const auto& [fp, s] : assignment) a[fp] = split_name(s);
    return {{"train_ratio", params.train_ratio},
            {"test_count", params.test_count},
            {"seed", params.seed},
            {"assignment", a}};
  }

  static SplitManifest from_json(const nlohmann::json& j) {
    SplitManifest m;
    m.params.train_ratio = j.at("train_ratio").get<double>();
    m.params.test_count = j.at("test_count").get<std::size_t>();
    m.params.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [fp, s] : j.at("assignment").items()) m.assignment[fp] = split_from_name(s.get<std::string>());
    return m;
  }

  friend bool operator==(const SplitManifest&, const SplitManifest&) = default;
};

// Splits are decided per fingerprint: shuffle the distinct fingerprints, reserve the test set
// first, then cut the remainder at round(remainder * train_ratio).
inline SplitManifest assign_splits(std::vector<std::string> fingerprints, const SplitParams& params = {}) {
  if (!(params.train_ratio >= 0.0 && params.train_ratio <= 1.0)) {
    throw ConfigError("train_ratio must be in [0, 1]");
  }
  for (const auto& fp : fingerprints) {
    if (fp.empty()) throw DataError("sample without fingerprint cannot be assigned a split");
  }
  std::sort(fingerprints.begin(), fingerprints.end());
  fingerprints.erase(std::unique(fingerprints.begin(), fingerprints.end()), fingerprints.end());
  Rng rng(params.seed);
  shuffle(fingerprints, rng);

  SplitManifest m;
  m.params = params;
  const std::size_t n = fingerprints.size();
  const std::size_t test = std::min(params.test_count, n);
  const std::size_t rest = n - test;
  const auto train = static_cast<std::size_t>(std::llround(static_cast<double>(rest) * params.train_ratio));
  for (std::size_t i = 0; i < n; ++i) {
    const Split s = i < test ? Split::Test : i < test + train ? Split::Train : Split::Val;
    m.assignment[fingerprints[i]] = s;
  }
  return m;
}

inline SplitManifest assign_splits(const std::vector<TrainingSample>& samples, const SplitParams& params = {}) {
  std::vector<std::string> fps;
  fps.reserve(samples.size());
  for (const auto& s : samples) fps.push_back(s.meta.fingerprint);
  return assign_splits(std::move(fps), params);
}

inline void apply_splits(std::vector<TrainingSample>& samples, const SplitManifest& manifest) {
  for (auto& s : samples) s.meta.split = manifest.split_of(s.meta.fingerprint);
}

struct DatasetCard {
  std::size_t total = 0;
  std::map<std::string, std::size_t> by_split, by_origin, by_architecture, by_flags;
  std::map<std::string, std::size_t> fingerprints_by_split;
  std::map<std::string, Histogram> metric_histograms;  // normalized ground truth, 10 bins

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json h = nlohmann::ordered_json::object();
    for (const auto& [k, v] : metric_histograms) h[k] = v.to_json();
    return {{"total", total},
            {"by_split", by_split},
            {"fingerprints_by_split", fingerprints_by_split},
            {"by_origin", by_origin},
            {"by_architecture", by_architecture},
            {"by_flags", by_flags},
            {"metric_histograms", h}};
  }

  std::string to_markdown() const {
    std::string md = "# Dataset card\n\nTotal samples: " + std::to_string(total) + "\n";
    auto table = [&](const std::string& title, const std::map<std::string, std::size_t>& m) {
      md += "\n## " + title + "\n\n| value | samples |\n|---|---|\n";
      for (const auto& [k, v] : m) md += "| " + (k.empty() ? std::string("(none)") : k) + " | " + std::to_string(v) + " |\n";
    };
    table("Split", by_split);
    table("Distinct fingerprints per split", fingerprints_by_split);
    table("Origin", by_origin);
    table("Architecture", by_architecture);
    table("Compiler flags", by_flags);
    md += "\n## Normalized metric distributions (10 bins over [0, 1])\n\n| metric |";
    for (int i = 0; i < 10; ++i) md += " b" + std::to_string(i) + " |";
    md += "\n|---|";
    for (int i = 0; i < 10; ++i) md += "---|";
    md += "\n";
    for (auto id : kAllMetrics) {
      auto it = metric_histograms.find(std::string(metric_key(id)));
      if (it == metric_histograms.end()) continue;
      md += "| " + std::string(metric_key(id)) + " |";
      for (auto c : it->second.counts) md += " " + std::to_string(c) + " |";
      md += "\n";
    }
    return md;
  }
};

inline DatasetCard dataset_card(const std::vector<TrainingSample>& samples) {
  DatasetCard card;
  card.total = samples.size();
  std::map<std::string, std::set<std::string>> fps;
  std::array<std::vector<double>, kMetricCount> values;
  for (const auto& s : samples) {
    const std::string split(split_name(s.meta.split));
    card.by_split[split]++;
    fps[split].insert(s.meta.fingerprint);
    card.by_origin[std::string(origin_name(s.meta.origin))]++;
    card.by_architecture[s.meta.config.architecture]++;
    card.by_flags[s.meta.config.flags_string()]++;
    const auto norm = sample_counters(s);
    for (auto id : kAllMetrics) values[index_of(id)].push_back(norm.at(id));
  }
  for (const auto& [split, set] : fps) card.fingerprints_by_split[split] = set.size();
  if (!samples.empty()) {
    for (auto id : kAllMetrics) {
      card.metric_histograms[std::string(metric_key(id))] =
          histogram(values[index_of(id)], uniform_edges(0.0, 1.0, 10));
    }
  }
  return card;
}

inline std::filesystem::path split_file(const std::filesystem::path& dir, Split s) {
  return dir / (std::string(split_name(s)) + ".jsonl");
}

// One JSONL file per split plus card.json / card.md / splits.json, each written via rename.
inline void write_dataset(std::vector<TrainingSample> samples, const SplitManifest& manifest,
                          const std::filesystem::path& dir) {
  apply_splits(samples, manifest);
  std::filesystem::create_directories(dir);
  std::map<Split, std::string> text;
  for (auto s : kSplits) text[s];
  for (const auto& s : samples) text[s.meta.split] += s.to_json().dump() + "\n";
  for (const auto& [split, body] : text) write_file_atomic(split_file(dir, split), body);
  const auto card = dataset_card(samples);
  write_file_atomic(dir / "card.json", card.to_json().dump(2) + "\n");
  write_file_atomic(dir / "card.md", card.to_markdown());
  write_file_atomic(dir / "splits.json", manifest.to_json().dump(2) + "\n");
}

inline std::vector<TrainingSample> read_split(const std::filesystem::path& file) {
  std::vector<TrainingSample> out;
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open " + file.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(TrainingSample::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(file.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// Samples of every split file present in `dir`, in train, val, test order.
inline std::vector<TrainingSample> read_dataset(const std::filesystem::path& dir) {
  std::vector<TrainingSample> out;
  bool any = false;
  for (auto s : kSplits) {
    const auto file = split_file(dir, s);
    if (!std::filesystem::exists(file)) continue;
    any = true;
    for (auto& sample : read_split(file)) {
      if (sample.meta.split != s) {
        throw DataError(file.string() + " holds a record tagged " + std::string(split_name(sample.meta.split)));
      }
      out.push_back(std::move(sample));
    }
  }
  if (!any) throw DataError("no split files in " + dir.string());
  return out;
}

inline const std::vector<std::string>& export_templates() {
  static const std::vector<std::string> names = {"llama3", "chatml", "plain"};
  return names;
}

// Stamps model-specific framing onto a structured record.
inline std::string export_text(const TrainingSample& s, std::string_view template_name) {
  if (template_name == "llama3") {
    return "<|begin_of_text|><|start_header_id|>system<|end_header_id|>\n\n" + s.system +
           "<|eot_id|><|start_header_id|>user<|end_header_id|>\n\n" + s.user +
           "<|eot_id|><|start_header_id|>assistant<|end_header_id|>\n\n" + s.assistant + "<|eot_id|>";
  }
  if (template_name == "chatml") {
    return "<|im_start|>system\n" + s.system + "<|im_end|>\n<|im_start|>user\n" + s.user +
           "<|im_end|>\n<|im_start|>assistant\n" + s.assistant + "<|im_end|>\n";
  }
  if (template_name == "plain") {
    return "### System\n" + s.system + "\n\n### User\n" + s.user + "\n\n### Assistant\n" + s.assistant + "\n";
  }
  throw ConfigError("unknown export template '" + std::string(template_name) + "'");
}

inline void export_dataset(const std::vector<TrainingSample>& samples, std::string_view template_name,
                           const std::filesystem::path& out) {
  std::string body;
  for (const auto& s : samples) {
    nlohmann::ordered_json rec = {{"text", export_text(s, template_name)}, {"split", split_name(s.meta.split)}};
    body += rec.dump() + "\n";
  }
  write_file_atomic(out, body);
}

}  // namespace counterlens

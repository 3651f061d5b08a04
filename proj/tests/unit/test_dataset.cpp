#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "counterlens/corpus_client.hpp"
#include "counterlens/dataset.hpp"

using namespace counterlens;

namespace {

const char* kFlags = "--std=c++17 -O3 -ffast-math";

// Counter block as published for a gfx90a sample.
const char* kPublishedBlock = R"({

"compiler_flags": "--std=c++17 -O3 -ffast-math",
"architecture": "gfx90a",
"L1_Cache_Arithmetic_Intensity": "0.002",
"L2_Cache_Arithmetic_Intensity": "0.002",
"HBM_Arithmetic_Intensity": "0.004",
"L1_Cache_GFLOPS": "0.459",
"L2_Cache_GFLOPS": "0.459",
"HBM_GFLOPS": "0.459",
"L1_Cache_Bandwidth": "0.089",
"L2_Cache_Bandwidth": "0.070",
"L2_Fabric_Write_BW": "0.022",
"L2_Fabric_Read_BW": "0.022",
"L1_Cache_Hit_Rate": "0.500",
"L2_Cache_Hit_Rate": "0.370"
})";

NormalizedCounters published_values() {
  const double v[] = {0.002, 0.002, 0.004, 0.459, 0.459, 0.459, 0.089, 0.070, 0.022, 0.022, 0.500, 0.370};
  NormalizedCounters n;
  for (auto id : kAllMetrics) n.set(id, v[index_of(id)]);
  return n;
}

NormalizedCounters random_quantized(Rng& rng) {
  NormalizedCounters n;
  for (auto id : kAllMetrics) n.set(id, static_cast<double>(uniform_below(rng, 1001)) / 1000.0);
  return n;
}

LabeledSample labeled(std::string fingerprint, std::string source, std::string arch, std::vector<std::string> flags,
                      const NormalizedCounters& norm) {
  LabeledSample s;
  s.source = std::move(source);
  s.config.architecture = std::move(arch);
  s.config.compiler_flags = std::move(flags);
  s.counters = denormalize(norm, NormRanges::defaults());
  s.origin = Origin::Synthetic;
  s.fingerprint = std::move(fingerprint);
  return s;
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  return d;
}

std::vector<TrainingSample> small_corpus(std::size_t kernels, std::size_t variants, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainingSample> out;
  for (std::size_t k = 0; k < kernels; ++k) {
    for (std::size_t v = 0; v < variants; ++v) {
      auto s = labeled("fp" + std::to_string(k), "// kernel " + std::to_string(k) + " v" + std::to_string(v) + "\n",
                       v % 2 ? "gfx942" : "gfx90a", v % 3 ? std::vector<std::string>{"-O3"} : std::vector<std::string>{},
                       random_quantized(rng));
      out.push_back(render_sample(s, NormRanges::defaults()));
    }
  }
  return out;
}

}  // namespace

TEST(CounterBlock, MatchesPublishedLayout) {
  EXPECT_EQ(serialize_counter_block(published_values(), kFlags, "gfx90a"), kPublishedBlock);
}

TEST(CounterBlock, PublishedBlockExtractsBack) {
  auto e = extract_json(kPublishedBlock);
  EXPECT_EQ(e.normalized, published_values());
  EXPECT_EQ(e.compiler_flags, kFlags);
  EXPECT_EQ(e.architecture, "gfx90a");
}

TEST(Prompt, TrainingTurns) {
  auto s = render_sample(labeled("fp", "int main() {}\n", "gfx90a", {"--std=c++17", "-O3", "-ffast-math"},
                                 published_values()),
                         NormRanges::defaults());
  EXPECT_EQ(s.system, "You are an expert GPU programmer and profiler. Given a code, you will predict its "
                      "performance counters.");
  EXPECT_EQ(s.user,
            "For the GPU architecture gfx90a and the compiler flags --std=c++17 -O3 -ffast-math, what are the "
            "bandwidth, arithmetic intensity, hit rates, flops of the following code? Output the answer in JSON "
            "format.\n\nint main() {}\n");
  EXPECT_EQ(s.assistant, std::string("Here are the performance counters for the gfx90a GPU architecture and the "
                                     "--std=c++17 -O3 -ffast-math compiler flags combination in JSON format:\n\n"
                                     "```json\n") +
                             kPublishedBlock + "\n```");
}

TEST(Prompt, EmptyFlagsKeepTemplateShape) {
  EXPECT_EQ(user_prompt("gfx942", "", "x"),
            "For the GPU architecture gfx942 and the compiler flags , what are the bandwidth, arithmetic "
            "intensity, hit rates, flops of the following code? Output the answer in JSON format.\n\nx");
}

TEST(Render, ZeroAndCeilingVectors) {
  const auto ranges = NormRanges::defaults();
  CounterVector zero, top;
  for (auto id : kAllMetrics) {
    zero.set(id, 0.0);
    top.set(id, ranges.at(id).ceiling);
  }
  LabeledSample s;
  s.config.architecture = "gfx90a";
  s.fingerprint = "fp";
  s.counters = zero;
  const auto z = render_sample(s, ranges);
  s.counters = top;
  const auto t = render_sample(s, ranges);
  for (auto id : kAllMetrics) {
    const std::string key = "\"" + std::string(metric_key(id)) + "\": ";
    EXPECT_NE(z.assistant.find(key + "\"0.000\""), std::string::npos) << metric_key(id);
    EXPECT_NE(t.assistant.find(key + "\"1.000\""), std::string::npos) << metric_key(id);
  }
}

TEST(Render, OutOfRangeCounterRejected) {
  LabeledSample s;
  s.config.architecture = "gfx90a";
  s.counters = denormalize(published_values(), NormRanges::defaults());
  s.counters.set(MetricId::L2_Cache_Hit_Rate, 140.0);
  EXPECT_THROW(render_sample(s, NormRanges::defaults()), RangeViolation);
}

TEST(RenderProperties, SerializationChainIsIdempotent) {
  Rng rng(5);
  const auto ranges = NormRanges::defaults();
  for (int i = 0; i < 300; ++i) {
    const auto norm = random_quantized(rng);
    const auto first = render_sample(labeled("fp", "src", "gfx90a", {"-O3"}, norm), ranges);
    const auto back = TrainingSample::from_json(nlohmann::json::parse(first.to_json().dump()));
    EXPECT_EQ(back, first);
    const auto recovered = sample_counters(back);
    EXPECT_EQ(recovered, norm);
    const auto second = render_sample(labeled("fp", "src", "gfx90a", {"-O3"}, recovered), ranges);
    EXPECT_EQ(second.assistant, first.assistant);
  }
}

TEST(Splits, CountsForHundredFingerprints) {
  std::vector<std::string> fps;
  for (int i = 0; i < 100; ++i) fps.push_back("fp" + std::to_string(i));
  auto m = assign_splits(fps, {0.9, 10, 7});
  auto c = m.counts();
  EXPECT_EQ(c[Split::Train], 81u);
  EXPECT_EQ(c[Split::Val], 9u);
  EXPECT_EQ(c[Split::Test], 10u);
}

TEST(Splits, VariantsShareTheirKernelSplit) {
  auto samples = small_corpus(40, 6, 3);
  auto m = assign_splits(samples, {0.9, 8, 1});
  apply_splits(samples, m);
  std::map<std::string, std::set<Split>> seen;
  for (const auto& s : samples) seen[s.meta.fingerprint].insert(s.meta.split);
  ASSERT_EQ(seen.size(), 40u);
  for (const auto& [fp, splits] : seen) EXPECT_EQ(splits.size(), 1u) << fp;
  EXPECT_EQ(m.counts()[Split::Test], 8u);
}

TEST(Splits, DeterministicAndOrderIndependent) {
  std::vector<std::string> fps;
  for (int i = 0; i < 200; ++i) fps.push_back("fp" + std::to_string(i));
  auto a = assign_splits(fps, {0.9, 20, 99});
  std::reverse(fps.begin(), fps.end());
  fps.push_back("fp3");
  auto b = assign_splits(fps, {0.9, 20, 99});
  EXPECT_EQ(a, b);
  EXPECT_NE(a.assignment, assign_splits(fps, {0.9, 20, 100}).assignment);
}

TEST(Splits, MissingFingerprintIsError) {
  EXPECT_THROW(assign_splits(std::vector<std::string>{"a", ""}), DataError);
  auto m = assign_splits(std::vector<std::string>{"a"});
  EXPECT_THROW(m.split_of("b"), DataError);
  EXPECT_THROW(assign_splits(std::vector<std::string>{"a"}, {1.5, 0, 0}), ConfigError);
}

TEST(Splits, ManifestRoundTrip) {
  auto m = assign_splits(std::vector<std::string>{"a", "b", "c", "d"}, {0.5, 1, 4});
  EXPECT_EQ(SplitManifest::from_json(nlohmann::json::parse(m.to_json().dump())), m);
}

TEST(DatasetFiles, WriteReadRoundTripWithNonAscii) {
  auto samples = small_corpus(3, 1, 8);
  samples[0] = render_sample(labeled("fp0", "// résumé ✓ \"quoted\"\n\tint main() {}\n", "gfx90a", {"-O3"},
                                     published_values()),
                             NormRanges::defaults());
  const auto dir = fresh_dir("counterlens_ds_roundtrip");
  auto m = assign_splits(samples, {0.5, 1, 2});
  write_dataset(samples, m, dir);
  for (auto name : {"train.jsonl", "val.jsonl", "test.jsonl", "card.json", "card.md", "splits.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
  }
  auto back = read_dataset(dir);
  ASSERT_EQ(back.size(), 3u);
  apply_splits(samples, m);
  for (const auto& s : samples) {
    EXPECT_NE(std::find(back.begin(), back.end(), s), back.end()) << s.meta.fingerprint;
  }
  EXPECT_EQ(SplitManifest::from_json(nlohmann::json::parse(std::ifstream(dir / "splits.json"))), m);
  std::filesystem::remove_all(dir);
}

TEST(DatasetFiles, EverySplitGetsAFile) {
  auto samples = small_corpus(3, 1, 9);
  const auto dir = fresh_dir("counterlens_ds_three");
  auto m = assign_splits(samples, {0.5, 1, 0});
  write_dataset(samples, m, dir);
  std::size_t lines = 0;
  for (auto s : kSplits) lines += read_jsonl(split_file(dir, s)).size();
  EXPECT_EQ(lines, 3u);
  std::filesystem::remove_all(dir);
}

TEST(DatasetFiles, MislabeledRecordRejected) {
  auto samples = small_corpus(2, 1, 10);
  const auto dir = fresh_dir("counterlens_ds_mislabeled");
  std::filesystem::create_directories(dir);
  samples[0].meta.split = Split::Test;
  std::ofstream(dir / "train.jsonl") << samples[0].to_json().dump() << "\n";
  EXPECT_THROW(read_dataset(dir), DataError);
  std::filesystem::remove_all(fresh_dir("counterlens_ds_empty"));
  std::filesystem::create_directories(fresh_dir("counterlens_ds_empty"));
  EXPECT_THROW(read_dataset(std::filesystem::temp_directory_path() / "counterlens_ds_empty"), DataError);
  std::filesystem::remove_all(dir);
}

TEST(DatasetCardTest, TotalsAreConsistent) {
  auto samples = small_corpus(20, 3, 11);
  apply_splits(samples, assign_splits(samples, {0.9, 4, 0}));
  const auto card = dataset_card(samples);
  EXPECT_EQ(card.total, 60u);
  auto sum = [](const std::map<std::string, std::size_t>& m) {
    std::size_t n = 0;
    for (const auto& [k, v] : m) n += v;
    return n;
  };
  EXPECT_EQ(sum(card.by_split), 60u);
  EXPECT_EQ(sum(card.by_architecture), 60u);
  EXPECT_EQ(sum(card.by_flags), 60u);
  EXPECT_EQ(sum(card.fingerprints_by_split), 20u);
  EXPECT_EQ(card.fingerprints_by_split.at("test"), 4u);
  ASSERT_EQ(card.metric_histograms.size(), kMetricCount);
  for (const auto& [k, h] : card.metric_histograms) EXPECT_EQ(h.total(), 60u) << k;
  EXPECT_NE(card.to_markdown().find("| test | 12 |"), std::string::npos);
}

TEST(Export, TemplatesFrameEachTurnOnce) {
  auto s = small_corpus(1, 1, 12)[0];
  for (const auto& name : export_templates()) {
    const auto text = export_text(s, name);
    for (const auto* part : {&s.system, &s.user, &s.assistant}) {
      const auto at = text.find(*part);
      ASSERT_NE(at, std::string::npos) << name;
      EXPECT_EQ(text.find(*part, at + 1), std::string::npos) << name;
    }
    EXPECT_LT(text.find(s.system), text.find(s.user));
    EXPECT_LT(text.find(s.user), text.find(s.assistant));
  }
  EXPECT_EQ(export_text(s, "llama3").rfind("<|begin_of_text|>", 0), 0u);
  EXPECT_THROW(export_text(s, "alpaca"), ConfigError);
}

TEST(Export, WritesJsonLinesWithSplit) {
  auto samples = small_corpus(4, 1, 13);
  apply_splits(samples, assign_splits(samples, {0.5, 2, 0}));
  const auto p = std::filesystem::temp_directory_path() / "counterlens_export.jsonl";
  export_dataset(samples, "chatml", p);
  auto lines = read_jsonl(p);
  ASSERT_EQ(lines.size(), 4u);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    EXPECT_EQ(lines[i]["split"], split_name(samples[i].meta.split));
    EXPECT_EQ(lines[i]["text"], export_text(samples[i], "chatml"));
  }
  std::filesystem::remove(p);
}

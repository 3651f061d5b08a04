#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "counterlens/corpus_client.hpp"
#include "counterlens/profile_ingest.hpp"

using namespace counterlens;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

ProfileRecord low_level(double flops, double hbm_bytes, double duration) {
  ProfileRecord r;
  r.kernel = "k";
  r.config.architecture = "gfx90a";
  LowLevelCounters c;
  c.flops = flops;
  c.hbm_bytes = hbm_bytes;
  c.duration_s = duration;
  r.counters = c;
  return r;
}

const char* kHeader =
    "kernel,architecture,compiler_flags,flops,duration_s,l1_bytes,l2_bytes,hbm_bytes,hbm_read_bytes,"
    "hbm_write_bytes,l1_requests,l1_hits,l2_requests,l2_hits\n";

}  // namespace

TEST(Ingest, CsvHappyPath) {
  const auto p = write_temp("counterlens_ingest_ok.csv",
                            std::string(kHeader) +
                                "a.hip,gfx90a,-O3,1000,1e-6,8000,8000,8000,4000,4000,100,50,100,37\n"
                                "b.hip,gfx942,\"-O3 -ffast-math\",2000,2e-6,8000,8000,8000,4000,4000,10,10,10,0\n"
                                "c.hip,gfx90a,,0,1e-3,16,16,16,8,8,1,0,1,0\n");
  auto r = ingest(p);
  EXPECT_TRUE(r.rejected.empty());
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.records[1].config.compiler_flags, (std::vector<std::string>{"-O3", "-ffast-math"}));
  EXPECT_TRUE(r.records[2].config.compiler_flags.empty());
  EXPECT_FALSE(r.records[0].pre_derived());
  std::filesystem::remove(p);
}

TEST(Ingest, ZeroDurationRowRejectedOthersKept) {
  const auto p = write_temp("counterlens_ingest_dur.csv",
                            std::string(kHeader) +
                                "a.hip,gfx90a,-O3,1000,1e-6,8,8,8,4,4,1,1,1,1\n"
                                "b.hip,gfx90a,-O3,1000,0,8,8,8,4,4,1,1,1,1\n"
                                "c.hip,gfx90a,-O3,1000,1e-6,8,8,8,4,4,1,1,1,1\n");
  auto r = ingest(p);
  ASSERT_EQ(r.records.size(), 2u);
  ASSERT_EQ(r.rejected.size(), 1u);
  EXPECT_EQ(r.rejected[0].row, 2u);
  EXPECT_NE(r.rejected[0].message.find("duration"), std::string::npos);
  std::filesystem::remove(p);
}

TEST(Ingest, RowLevelDiagnostics) {
  const auto p = write_temp("counterlens_ingest_bad.csv",
                            std::string(kHeader) +
                                "a.hip,gfx90a,-O3,lots,1e-6,8,8,8,4,4,1,1,1,1\n"
                                "b.hip,gfx90a,-O3,1000,1e-6,8,8,8,4,4,1,2,1,1\n"
                                "c.hip,gfx90a,-O3,1000,1e-6\n");
  auto r = ingest(p);
  EXPECT_TRUE(r.records.empty());
  ASSERT_EQ(r.rejected.size(), 3u);
  EXPECT_NE(r.rejected[0].message.find("non-numeric"), std::string::npos);
  EXPECT_NE(r.rejected[1].message.find("l1_hits"), std::string::npos);
  std::filesystem::remove(p);
}

TEST(Ingest, UnknownColumnFailsFile) {
  const auto p = write_temp("counterlens_ingest_col.csv", "kernel,architecture,bogus\na,gfx90a,1\n");
  EXPECT_THROW(ingest(p), DataError);
  SchemaMapping m;
  m.columns["bogus"] = "flops";
  EXPECT_NO_THROW(ingest(p, m));
  std::filesystem::remove(p);
}

TEST(Ingest, JsonLinesPreDerived) {
  const auto p = write_temp("counterlens_ingest_pre.jsonl",
                            R"({"kernel":"a","architecture":"gfx90a","compiler_flags":["-O3"],"L1_Cache_Hit_Rate":50,"HBM_GFLOPS":120.5})"
                            "\n"
                            R"({"kernel":"b","architecture":"gfx90a","L1_Cache_Hit_Rate":150})"
                            "\n");
  auto r = ingest(p);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_TRUE(r.records[0].pre_derived());
  EXPECT_EQ(derive_metrics(r.records[0]).at(MetricId::L1_Cache_Hit_Rate), 50.0);
  ASSERT_EQ(r.rejected.size(), 1u);
  EXPECT_NE(r.rejected[0].message.find("L1_Cache_Hit_Rate"), std::string::npos);
  std::filesystem::remove(p);
}

TEST(Ingest, MappingRenamesProfilerColumns) {
  const auto p = write_temp("counterlens_ingest_map.csv",
                            "Kernel_Name,gpu,FLOPS_TOTAL,DurationSec,HBM_BYTES\nk,gfx942,100,1e-6,800\n");
  SchemaMapping m;
  m.columns = {{"Kernel_Name", "kernel"}, {"gpu", "architecture"}, {"FLOPS_TOTAL", "flops"},
               {"DurationSec", "duration_s"}, {"HBM_BYTES", "hbm_bytes"}};
  auto r = ingest(p, m);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].config.architecture, "gfx942");
  EXPECT_DOUBLE_EQ(derive_metrics(r.records[0]).at(MetricId::HBM_Arithmetic_Intensity), 0.125);
  std::filesystem::remove(p);
}

TEST(CsvParser, QuotesAndNewlines) {
  auto rows = parse_csv("a,\"b,c\",\"say \"\"hi\"\"\"\r\n1,\"x\ny\",3\n");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0][1], "b,c");
  EXPECT_EQ(rows[0][2], "say \"hi\"");
  EXPECT_EQ(rows[1][1], "x\ny");
  EXPECT_THROW(parse_csv("\"open"), DataError);
}

TEST(DeriveMetrics, ListingScaleNumbers) {
  auto c = derive_metrics(low_level(2.05056e5, 1.640448e6, 1e-6));
  EXPECT_NEAR(c.at(MetricId::HBM_Arithmetic_Intensity), 0.125, 1e-15);
  EXPECT_NEAR(c.at(MetricId::HBM_GFLOPS), 205.056, 1e-9);
}

TEST(DeriveMetrics, PerfectCacheAndZeroFlops) {
  auto r = low_level(0.0, 64.0, 1e-6);
  r.counters->l1_bytes = 128.0;
  r.counters->l1_requests = 10;
  r.counters->l1_hits = 10;
  r.counters->l2_requests = 4;
  r.counters->l2_hits = 0;
  auto c = derive_metrics(r);
  EXPECT_EQ(c.at(MetricId::L1_Cache_Hit_Rate), 100.0);
  EXPECT_EQ(c.at(MetricId::L2_Cache_Hit_Rate), 0.0);
  for (auto level : kMemoryLevels) EXPECT_EQ(c.at(gflops_metric(level)), 0.0);
  EXPECT_EQ(c.at(MetricId::L1_Cache_Arithmetic_Intensity), 0.0);
  EXPECT_EQ(c.at(MetricId::HBM_Arithmetic_Intensity), 0.0);
}

TEST(DeriveMetrics, ZeroBytesLeavesLevelAbsent) {
  auto r = low_level(100.0, 800.0, 1e-6);
  r.counters->l2_bytes = 0.0;
  auto c = derive_metrics(r);
  EXPECT_FALSE(c.has(MetricId::L2_Cache_Arithmetic_Intensity));
  EXPECT_FALSE(c.has(MetricId::L2_Cache_Bandwidth));
  EXPECT_FALSE(c.has(MetricId::L1_Cache_Arithmetic_Intensity));
  EXPECT_TRUE(c.has(MetricId::HBM_Arithmetic_Intensity));
}

TEST(DeriveMetrics, FabricBandwidthFromReadWriteBytes) {
  auto r = low_level(100.0, 0.0, 1e-6);
  r.counters->hbm_bytes.reset();
  r.counters->hbm_read_bytes = 3e6;
  r.counters->hbm_write_bytes = 1e6;
  auto c = derive_metrics(r);
  EXPECT_NEAR(c.at(MetricId::L2_Fabric_Read_BW), 3000.0, 1e-9);
  EXPECT_NEAR(c.at(MetricId::L2_Fabric_Write_BW), 1000.0, 1e-9);
  EXPECT_NEAR(c.at(MetricId::HBM_Arithmetic_Intensity), 100.0 / 4e6, 1e-18);
}

TEST(DeriveMetricsProperties, IntensityTimesBandwidthIsThroughput) {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    auto r = low_level(uniform_unit(rng) * 1e12, 1.0 + uniform_unit(rng) * 1e10, 1e-6 + uniform_unit(rng));
    r.counters->l1_bytes = 1.0 + uniform_unit(rng) * 1e10;
    r.counters->l2_bytes = 1.0 + uniform_unit(rng) * 1e10;
    const auto c = derive_metrics(r);
    for (auto level : kMemoryLevels) {
      const double product = c.at(ai_metric(level)) * *level_bandwidth(r, level);
      EXPECT_NEAR(product, c.at(gflops_metric(level)), 1e-12 * std::max(1.0, c.at(gflops_metric(level))));
    }
    EXPECT_EQ(derive_metrics(r).at(MetricId::HBM_GFLOPS), c.at(MetricId::HBM_GFLOPS));
  }
}

TEST(ExpandConfigs, FlagsTimesArchitectures) {
  auto jobs = expand_configs({{"k0", "fp0"}}, {{}, {"-ffast-math"}, {"-munsafe-fp-atomics"}}, {"gfx90a", "gfx942"});
  ASSERT_EQ(jobs.size(), 6u);
  EXPECT_TRUE(jobs[0].config.compiler_flags.empty());
  EXPECT_EQ(jobs[0].config.architecture, "gfx90a");
  EXPECT_EQ(jobs[1].config.architecture, "gfx942");
  EXPECT_EQ(jobs[5].config.compiler_flags, std::vector<std::string>{"-munsafe-fp-atomics"});
  for (const auto& j : jobs) EXPECT_EQ(j.kernel.fingerprint, "fp0");
}

TEST(ExpandConfigs, DegenerateAndStableOrder) {
  EXPECT_EQ(expand_configs({{"k", "f"}}, {}, {"gfx90a", "gfx942"}).size(), 2u);
  EXPECT_THROW(expand_configs({{"k", "f"}}, {{}}, {}), ConfigError);
  auto a = expand_configs({{"k0", "a"}, {"k1", "b"}}, {{"-O2"}, {"-O3"}}, {"x", "y"});
  auto b = expand_configs({{"k0", "a"}, {"k1", "b"}}, {{"-O2"}, {"-O3"}}, {"x", "y"});
  ASSERT_EQ(a.size(), 8u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].to_json(), b[i].to_json());
  EXPECT_EQ(a[4].kernel.id, "k1");
}

TEST(ExpandConfigs, ManifestIsJsonLines) {
  auto jobs = expand_configs({{"k0", "fp0"}}, {{"-O3"}}, {"gfx90a", "gfx942"}, "rocm-6.2");
  const auto p = std::filesystem::temp_directory_path() / "counterlens_manifest.jsonl";
  write_manifest(jobs, p);
  auto lines = read_jsonl(p);
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[1]["architecture"], "gfx942");
  EXPECT_EQ(lines[1]["toolkit"], "rocm-6.2");
  std::filesystem::remove(p);
}

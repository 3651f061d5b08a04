#include <gtest/gtest.h>

#include <filesystem>

#include "counterlens/eval.hpp"

using namespace counterlens;

namespace {

const std::vector<double> kThresholds(kDefaultThresholds.begin(), kDefaultThresholds.end());

NormalizedCounters constant(double v) {
  NormalizedCounters n;
  for (auto id : kAllMetrics) n.set(id, v);
  return n;
}

std::string answer_with(const NormalizedCounters& n, const PredictRequest& req) {
  return assistant_text(req.architecture, req.compiler_flags,
                        serialize_counter_block(n, req.compiler_flags, req.architecture));
}

std::vector<TrainingSample> test_samples(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainingSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    NormalizedCounters n;
    for (auto id : kAllMetrics) n.set(id, static_cast<double>(uniform_below(rng, 1001)) / 1000.0);
    LabeledSample s;
    s.source = "// sample " + std::to_string(i) + "\n";
    s.config.architecture = "gfx90a";
    s.config.compiler_flags = {"-O3"};
    s.counters = denormalize(n, NormRanges::defaults());
    s.fingerprint = "fp" + std::to_string(i);
    out.push_back(render_sample(s, NormRanges::defaults()));
  }
  return out;
}

// Straightforward recount used as the reference for the table.
std::size_t naive_below(const std::vector<PredictionPair>& pairs, MetricId m, double threshold, double eps) {
  std::size_t n = 0;
  for (const auto& p : pairs) {
    if (p.metric != m || p.ground_truth < eps) continue;
    if (std::fabs(p.predicted - p.ground_truth) / p.ground_truth < threshold) ++n;
  }
  return n;
}

std::vector<PredictionPair> random_pairs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PredictionPair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    const auto m = kAllMetrics[uniform_below(rng, kMetricCount)];
    const double gt = static_cast<double>(uniform_below(rng, 1001)) / 1000.0;
    const double pred = std::clamp(gt + (uniform_unit(rng) - 0.5) * 0.2, 0.0, 1.0);
    pairs.push_back({m, pred, gt, "s" + std::to_string(i)});
  }
  return pairs;
}

class FixedTextBackend : public Backend {
 public:
  using Fn = std::function<std::string(const PredictRequest&)>;
  FixedTextBackend(Fn fn, bool probe_ok = true) : fn_(std::move(fn)), probe_ok_(probe_ok) {}
  BackendDescriptor info() const override { return {"fixed", BackendKind::Remote, {}, true, true}; }
  bool probe() const override { return probe_ok_; }
  BackendAnswer answer(const PredictRequest& req) const override {
    auto text = fn_(req);
    auto ex = extract_json(text);
    return {ex.normalized, text, ex.compiler_flags, ex.architecture};
  }

 private:
  Fn fn_;
  bool probe_ok_;
};

}  // namespace

TEST(RelativeError, Examples) {
  EXPECT_NEAR(*relative_error(0.52, 0.5), 0.04, 1e-15);
  EXPECT_NEAR(*relative_error(0.45, 0.5), 0.1, 1e-15);
  EXPECT_EQ(*relative_error(0.5, 0.5), 0.0);
  EXPECT_FALSE(relative_error(0.3, 0.0).has_value());
  EXPECT_FALSE(relative_error(0.3, 0.0009).has_value());
  EXPECT_TRUE(relative_error(0.3, 0.001).has_value());
  EXPECT_THROW(relative_error(0.3, -0.1), DataError);
}

TEST(ThresholdTable, ExactBoundaryIsNotBelow) {
  ASSERT_EQ(*relative_error(0.6875, 0.625), 0.1);
  const auto t = threshold_table({{MetricId::HBM_GFLOPS, 0.6875, 0.625, "s"}});
  const auto& r = t.row(MetricId::HBM_GFLOPS);
  EXPECT_EQ(r.counted, 1u);
  EXPECT_EQ(r.below, (std::vector<std::size_t>{0, 0, 0, 0, 0}));
  const auto t2 = threshold_table({{MetricId::HBM_GFLOPS, 0.6875, 0.625, "s"}}, {0.1, 0.100001});
  EXPECT_EQ(t2.row(MetricId::HBM_GFLOPS).below, (std::vector<std::size_t>{0, 1}));
}

TEST(ThresholdTable, ExampleCounts) {
  std::vector<PredictionPair> pairs = {{MetricId::L1_Cache_Hit_Rate, 0.505, 0.5, "a"},
                                       {MetricId::L1_Cache_Hit_Rate, 0.53, 0.5, "b"},
                                       {MetricId::L1_Cache_Hit_Rate, 0.7, 0.5, "c"},
                                       {MetricId::L1_Cache_Hit_Rate, 0.2, 0.0, "d"}};
  const auto r = threshold_table(pairs).row(MetricId::L1_Cache_Hit_Rate);
  EXPECT_EQ(r.counted, 3u);
  EXPECT_EQ(r.excluded, 1u);
  EXPECT_EQ(r.below, (std::vector<std::size_t>{1, 1, 1, 2, 2}));
  EXPECT_NEAR(*r.proportion(0), 1.0 / 3.0, 1e-15);
}

TEST(ThresholdTable, ThresholdsMustIncrease) {
  EXPECT_THROW(threshold_table({}, {}), ConfigError);
  EXPECT_THROW(threshold_table({}, {0.04, 0.02}), ConfigError);
  EXPECT_THROW(threshold_table({}, {0.0, 0.02}), ConfigError);
}

TEST(ThresholdTableProperties, MatchesNaiveRecount) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto pairs = random_pairs(2000, seed);
    const auto t = threshold_table(pairs, kThresholds);
    std::size_t total = 0;
    for (auto m : kAllMetrics) {
      const auto& r = t.row(m);
      total += r.total();
      for (std::size_t i = 0; i < kThresholds.size(); ++i) {
        EXPECT_EQ(r.below[i], naive_below(pairs, m, kThresholds[i], kDefaultEpsilon));
        if (i > 0) EXPECT_GE(r.below[i], r.below[i - 1]);
      }
      EXPECT_LE(r.below.back(), r.counted);
    }
    EXPECT_EQ(total, pairs.size());
  }
}

TEST(Report, NotApplicableRowsAndHistograms) {
  std::vector<PredictionPair> pairs = {{MetricId::HBM_GFLOPS, 0.5, 0.5, "a"},
                                       {MetricId::HBM_GFLOPS, 0.9, 1.0, "b"},
                                       {MetricId::L2_Cache_Hit_Rate, 0.1, 0.0, "c"}};
  const auto rep = build_report(pairs, kThresholds, kDefaultEpsilon);
  EXPECT_FALSE(rep.table.row(MetricId::L2_Cache_Hit_Rate).proportion(0).has_value());
  const auto md = rep.to_markdown();
  EXPECT_NE(md.find("| L2 Cache Hit Rate | n/a | n/a | n/a | n/a | n/a | 0 | 1 | 0 |"), std::string::npos) << md;
  EXPECT_NE(md.find("| <2% | <4% | <6% | <8% | <10% |"), std::string::npos);
  ASSERT_TRUE(rep.ground_truth_hist.count(MetricId::HBM_GFLOPS));
  EXPECT_EQ(rep.ground_truth_hist.at(MetricId::HBM_GFLOPS).counts.back(), 1u);
  EXPECT_EQ(rep.error_hist.at(MetricId::HBM_GFLOPS).total(), 2u);
  EXPECT_FALSE(rep.error_hist.count(MetricId::L2_Cache_Hit_Rate));
  EXPECT_TRUE(rep.to_json()["metrics"][index_of(MetricId::L2_Cache_Hit_Rate)]["proportions"][0].is_null());
}

TEST(Evaluate, PerfectBackendScoresEverything) {
  const auto samples = test_samples(30, 1);
  FixedTextBackend backend([&](const PredictRequest& req) {
    return answer_with(sample_counters(samples.at(req.request_id - 1)), req);
  });
  const auto rep = evaluate(backend, samples, NormRanges::defaults());
  EXPECT_TRUE(rep.failures.empty());
  for (const auto& r : rep.table.rows) {
    EXPECT_EQ(r.total(), 30u);
    EXPECT_EQ(r.below.front(), r.counted);
  }
  EXPECT_EQ(*rep.headline(), 1.0);
}

TEST(Evaluate, ConstantBackendMatchesHandComputation) {
  const auto samples = test_samples(60, 2);
  FixedTextBackend backend([](const PredictRequest& req) { return answer_with(constant(0.5), req); });
  const auto rep = evaluate(backend, samples, NormRanges::defaults());
  std::vector<PredictionPair> pairs;
  for (const auto& s : samples) {
    const auto gt = sample_counters(s);
    for (auto m : kAllMetrics) pairs.push_back({m, 0.5, gt.at(m), ""});
  }
  for (auto m : kAllMetrics) {
    for (std::size_t i = 0; i < kThresholds.size(); ++i) {
      EXPECT_EQ(rep.table.row(m).below[i], naive_below(pairs, m, kThresholds[i], kDefaultEpsilon));
    }
  }
}

TEST(Evaluate, SampleOrderDoesNotDependOnParallelism) {
  const auto samples = test_samples(40, 3);
  FixedTextBackend backend([](const PredictRequest& req) { return answer_with(constant(0.25), req); });
  EvalOptions serial;
  serial.parallelism = 1;
  EvalOptions wide;
  wide.parallelism = 16;
  EXPECT_EQ(evaluate(backend, samples, NormRanges::defaults(), serial).to_json(),
            evaluate(backend, samples, NormRanges::defaults(), wide).to_json());
}

TEST(Evaluate, FailuresAreCountedNotDropped) {
  const auto samples = test_samples(20, 4);
  FixedTextBackend backend([](const PredictRequest& req) {
    if (req.request_id % 4 == 0) return std::string("no idea");
    if (req.request_id % 5 == 0) throw BackendTimeout("fixed", "slow");
    return answer_with(constant(0.5), req);
  });
  const auto rep = evaluate(backend, samples, NormRanges::defaults());
  const auto kinds = rep.failures_by_kind();
  EXPECT_EQ(kinds.at("extraction:no_block"), 5u);
  EXPECT_EQ(kinds.at("timeout"), 3u);
  EXPECT_EQ(rep.failures.size(), 8u);
  EXPECT_EQ(rep.failures[0].raw_text, "no idea");
  for (const auto& r : rep.table.rows) {
    EXPECT_EQ(r.failed, 8u);
    EXPECT_EQ(r.total(), 20u);
  }
}

TEST(Evaluate, EmptyInputAndDeadBackend) {
  FixedTextBackend ok([](const PredictRequest& req) { return answer_with(constant(0.5), req); });
  EXPECT_THROW(evaluate(ok, {}, NormRanges::defaults()), DataError);
  FixedTextBackend unprobed([](const PredictRequest& req) { return answer_with(constant(0.5), req); }, false);
  EXPECT_THROW(evaluate(unprobed, test_samples(3, 5), NormRanges::defaults()), BackendUnavailable);
  FixedTextBackend dying([](const PredictRequest&) -> std::string { throw BackendUnavailable("fixed", "down"); });
  EXPECT_THROW(evaluate(dying, test_samples(3, 5), NormRanges::defaults()), BackendUnavailable);
}

TEST(Evaluate, OracleOnOwnLabelsIsExact) {
  OracleBackend oracle;
  std::vector<TrainingSample> samples;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    KernelGenSpec spec;
    spec.num_loads = 2;
    spec.num_compute = 3;
    spec.seed = seed;
    const auto k = generate(spec);
    LabeledSample s{k.source, {"gfx942", {"-O3"}, ""}, oracle.counters(k.source, "gfx942"), Origin::Oracle,
                    k.fingerprint};
    samples.push_back(render_sample(s, NormRanges::defaults()));
  }
  const auto rep = evaluate(oracle, samples, NormRanges::defaults());
  EXPECT_TRUE(rep.failures.empty());
  for (const auto& r : rep.table.rows) EXPECT_EQ(r.below.front(), r.counted);
}

TEST(Report, WritesArtifacts) {
  const auto rep = build_report(random_pairs(500, 9), kThresholds, kDefaultEpsilon);
  const auto dir = std::filesystem::temp_directory_path() / "counterlens_eval_report";
  std::filesystem::remove_all(dir);
  rep.write(dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "report.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "report.md"));
  EXPECT_TRUE(std::filesystem::exists(dir / "hist_ground_truth_HBM_GFLOPS.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "hist_relative_error_L1_Cache_Hit_Rate.csv"));
  std::filesystem::remove_all(dir);
}

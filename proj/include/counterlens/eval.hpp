#pragma once
// Relative-error threshold tables, distribution histograms and failure accounting.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "counterlens/dataset.hpp"
#include "counterlens/errors.hpp"
#include "counterlens/histogram.hpp"
#include "counterlens/metrics.hpp"
#include "counterlens/predictor.hpp"

namespace counterlens {

inline constexpr std::array<double, 5> kDefaultThresholds = {0.02, 0.04, 0.06, 0.08, 0.10};
inline constexpr double kDefaultEpsilon = 0.001;  // one quantum of the 3-decimal format

// |pred - gt| / gt, or nullopt when gt < epsilon (excluded as numerically unstable).
inline std::optional<double> relative_error(double predicted, double ground_truth, double epsilon = kDefaultEpsilon) {
  if (!std::isfinite(ground_truth) || ground_truth < 0.0) {
    throw DataError("ground truth must be finite and >= 0, got " + std::to_string(ground_truth));
  }
  if (!std::isfinite(predicted)) throw DataError("prediction must be finite");
  if (ground_truth < epsilon) return std::nullopt;
  return std::abs(predicted - ground_truth) / ground_truth;
}

struct PredictionPair {
  MetricId metric;
  double predicted = 0.0;
  double ground_truth = 0.0;
  std::string sample;
};

struct MetricRow {
  MetricId metric;
  std::size_t counted = 0;
  std::size_t excluded = 0;
  std::size_t failed = 0;
  std::vector<std::size_t> below;  // per threshold: counted pairs with error < threshold

  std::size_t total() const noexcept { return counted + excluded + failed; }

  std::optional<double> proportion(std::size_t t) const {
    if (counted == 0) return std::nullopt;
    return static_cast<double>(below.at(t)) / static_cast<double>(counted);
  }
};

struct ThresholdTable {
  std::vector<double> thresholds;
  double epsilon = kDefaultEpsilon;
  std::vector<MetricRow> rows;  // kAllMetrics order

  const MetricRow& row(MetricId id) const { return rows.at(index_of(id)); }
};

inline void check_thresholds(const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw ConfigError("no thresholds");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0) || (i > 0 && !(thresholds[i] > thresholds[i - 1]))) {
      throw ConfigError("thresholds must be positive and strictly increasing");
    }
  }
}

// Strict "<" at every threshold. `failed` adds per-metric failure counts.
inline ThresholdTable threshold_table(const std::vector<PredictionPair>& pairs,
                                      std::vector<double> thresholds = {kDefaultThresholds.begin(), kDefaultThresholds.end()},
                                      double epsilon = kDefaultEpsilon,
                                      const std::array<std::size_t, kMetricCount>& failed = {}) {
  check_thresholds(thresholds);
  ThresholdTable t;
  t.thresholds = std::move(thresholds);
  t.epsilon = epsilon;
  for (auto id : kAllMetrics) {
    MetricRow r{id, 0, 0, failed[index_of(id)], std::vector<std::size_t>(t.thresholds.size(), 0)};
    t.rows.push_back(std::move(r));
  }
  for (const auto& p : pairs) {
    auto& row = t.rows[index_of(p.metric)];
    const auto err = relative_error(p.predicted, p.ground_truth, epsilon);
    if (!err) {
      row.excluded++;
      continue;
    }
    row.counted++;
    // thresholds are sorted: find the first one the error falls below
    const auto first = std::upper_bound(t.thresholds.begin(), t.thresholds.end(), *err);
    for (auto it = first; it != t.thresholds.end(); ++it) {
      row.below[static_cast<std::size_t>(it - t.thresholds.begin())]++;
    }
  }
  return t;
}

struct SampleFailure {
  std::string sample;
  std::string kind;
  std::string message;
  std::string raw_text;
};

struct EvalReport {
  ThresholdTable table;
  std::map<MetricId, Histogram> ground_truth_hist;
  std::map<MetricId, Histogram> error_hist;
  std::size_t samples = 0;
  std::vector<SampleFailure> failures;

  // Share of all counted predictions below the largest threshold.
  std::optional<double> headline() const {
    std::size_t counted = 0, below = 0;
    for (const auto& r : table.rows) {
      counted += r.counted;
      below += r.below.back();
    }
    if (counted == 0) return std::nullopt;
    return static_cast<double>(below) / static_cast<double>(counted);
  }

  std::map<std::string, std::size_t> failures_by_kind() const {
    std::map<std::string, std::size_t> m;
    for (const auto& f : failures) m[f.kind]++;
    return m;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : table.rows) {
      nlohmann::ordered_json cells = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < table.thresholds.size(); ++i) {
        const auto p = r.proportion(i);
        cells.push_back(p ? nlohmann::ordered_json(*p) : nlohmann::ordered_json());
      }
      nlohmann::ordered_json row = {{"metric", metric_key(r.metric)}, {"total", r.total()},
                                    {"counted", r.counted},           {"excluded", r.excluded},
                                    {"failed", r.failed},             {"below", r.below},
                                    {"proportions", cells}};
      if (auto it = ground_truth_hist.find(r.metric); it != ground_truth_hist.end()) {
        row["ground_truth_histogram"] = it->second.to_json();
      }
      if (auto it = error_hist.find(r.metric); it != error_hist.end()) {
        row["relative_error_histogram"] = it->second.to_json();
      }
      rows.push_back(std::move(row));
    }
    nlohmann::ordered_json fails = nlohmann::ordered_json::array();
    for (const auto& f : failures) {
      fails.push_back({{"sample", f.sample}, {"kind", f.kind}, {"message", f.message}, {"raw", f.raw_text}});
    }
    const auto h = headline();
    return {{"thresholds", table.thresholds},
            {"epsilon", table.epsilon},
            {"comparison", "relative error strictly below threshold"},
            {"samples", samples},
            {"headline_within_largest_threshold", h ? nlohmann::ordered_json(*h) : nlohmann::ordered_json()},
            {"failures_by_kind", failures_by_kind()},
            {"metrics", rows},
            {"failures", fails}};
  }

  // Metrics as rows, thresholds as columns, percentages with one decimal.
  std::string to_markdown() const {
    auto pct = [](double v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.1f", v * 100.0);
      return std::string(buf);
    };
    std::string md = "| Metric |";
    for (double t : table.thresholds) md += " <" + pct(t).substr(0, pct(t).find('.')) + "% |";
    md += " counted | excluded | failed |\n|---|";
    for (std::size_t i = 0; i < table.thresholds.size(); ++i) md += "---|";
    md += "---|---|---|\n";
    for (const auto& r : table.rows) {
      md += "| " + std::string(info(r.metric).display_name) + " |";
      for (std::size_t i = 0; i < table.thresholds.size(); ++i) {
        const auto p = r.proportion(i);
        md += " " + (p ? pct(*p) : std::string("n/a")) + " |";
      }
      md += " " + std::to_string(r.counted) + " | " + std::to_string(r.excluded) + " | " +
            std::to_string(r.failed) + " |\n";
    }
    const auto h = headline();
    char eps[32];
    std::snprintf(eps, sizeof eps, "%g", table.epsilon);
    md += "\nSamples: " + std::to_string(samples) + ". Failed samples: " + std::to_string(failures.size()) +
          ". Ground truth below " + eps + " is excluded. Within " +
          pct(table.thresholds.back()) + "% overall: " + (h ? pct(*h) + "%" : std::string("n/a")) + ".\n";
    return md;
  }

  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    write_file_atomic(dir / "report.json", to_json().dump(2) + "\n");
    write_file_atomic(dir / "report.md", to_markdown());
    for (const auto& [id, h] : ground_truth_hist) {
      write_file_atomic(dir / ("hist_ground_truth_" + std::string(metric_key(id)) + ".csv"), h.to_csv());
    }
    for (const auto& [id, h] : error_hist) {
      write_file_atomic(dir / ("hist_relative_error_" + std::string(metric_key(id)) + ".csv"), h.to_csv());
    }
  }
};

// Ground-truth histograms over [0, 1] and relative-error histograms over [0, max(0.2, worst)].
inline EvalReport build_report(const std::vector<PredictionPair>& pairs, const std::vector<double>& thresholds,
                               double epsilon, const std::array<std::size_t, kMetricCount>& failed = {}) {
  EvalReport rep;
  rep.table = threshold_table(pairs, thresholds, epsilon, failed);
  std::array<std::vector<double>, kMetricCount> gt, err;
  for (const auto& p : pairs) {
    gt[index_of(p.metric)].push_back(std::clamp(p.ground_truth, 0.0, 1.0));
    if (auto e = relative_error(p.predicted, p.ground_truth, epsilon)) err[index_of(p.metric)].push_back(*e);
  }
  for (auto id : kAllMetrics) {
    const auto i = index_of(id);
    if (!gt[i].empty()) rep.ground_truth_hist[id] = histogram(gt[i], uniform_edges(0.0, 1.0, 20));
    if (!err[i].empty()) {
      const double worst = *std::max_element(err[i].begin(), err[i].end());
      rep.error_hist[id] = histogram(err[i], uniform_edges(0.0, std::max(0.2, worst), 20));
    }
  }
  return rep;
}

// The source embedded in a rendered user turn.
inline std::string source_of(const TrainingSample& s) {
  const auto prefix = user_prompt(s.meta.config.architecture, s.meta.config.flags_string(), "");
  if (s.user.compare(0, prefix.size(), prefix) != 0) {
    throw DataError("user turn does not follow the prompt template");
  }
  return s.user.substr(prefix.size());
}

struct EvalOptions {
  std::vector<double> thresholds{kDefaultThresholds.begin(), kDefaultThresholds.end()};
  double epsilon = kDefaultEpsilon;
  std::size_t parallelism = 4;
};

// Runs the backend over the test samples. Per-sample failures are recorded; a backend that
// is down for the whole run is a hard failure.
inline EvalReport evaluate(const Backend& backend, const std::vector<TrainingSample>& samples,
                           const NormRanges& ranges, const EvalOptions& options = {}) {
  if (samples.empty()) throw DataError("no samples");
  check_thresholds(options.thresholds);
  const auto id = backend.info().id;
  if (!backend.probe()) throw BackendUnavailable(id, "health probe failed");

  struct Outcome {
    NormalizedCounters predicted;
    std::optional<SampleFailure> failure;
    bool unavailable = false;
  };
  std::vector<Outcome> outcomes(samples.size());
  std::vector<NormalizedCounters> truth(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) truth[i] = sample_counters(samples[i]);

  auto sample_name = [&](std::size_t i) {
    return samples[i].meta.fingerprint + "#" + std::to_string(i);
  };
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= samples.size()) return;
      const auto& s = samples[i];
      auto& out = outcomes[i];
      PredictRequest req{source_of(s), s.meta.config.architecture, s.meta.config.flags_string(), i + 1};
      try {
        out.predicted = predict(backend, req, ranges).normalized;
      } catch (const ExtractionError& e) {
        out.failure = SampleFailure{sample_name(i), "extraction:" + std::string(extraction_kind_name(e.kind())), e.what(), e.raw_text()};
      } catch (const BackendUnavailable& e) {
        out.failure = SampleFailure{sample_name(i), "backend_unavailable", e.what(), {}};
        out.unavailable = true;
      } catch (const BackendTimeout& e) {
        out.failure = SampleFailure{sample_name(i), "timeout", e.what(), {}};
      } catch (const UnsupportedArchitecture& e) {
        out.failure = SampleFailure{sample_name(i), "unsupported_architecture", e.what(), {}};
      } catch (const OracleUnavailable& e) {
        out.failure = SampleFailure{sample_name(i), "oracle_unavailable", e.what(), {}};
      } catch (const ValidationError& e) {
        out.failure = SampleFailure{sample_name(i), "validation", e.what(), {}};
      } catch (const Error& e) {
        out.failure = SampleFailure{sample_name(i), "error", e.what(), {}};
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(options.parallelism, samples.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  if (std::all_of(outcomes.begin(), outcomes.end(), [](const Outcome& o) { return o.unavailable; })) {
    throw BackendUnavailable(id, "every prediction failed");
  }

  // deterministic reduction in sample order
  std::vector<PredictionPair> pairs;
  std::array<std::size_t, kMetricCount> failed{};
  std::vector<SampleFailure> failures;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& o = outcomes[i];
    if (o.failure) {
      failures.push_back(*o.failure);
      for (auto m : kAllMetrics) failed[index_of(m)]++;
      continue;
    }
    for (auto m : kAllMetrics) {
      if (auto p = o.predicted.get(m)) {
        pairs.push_back({m, *p, truth[i].at(m), sample_name(i)});
      } else {
        failed[index_of(m)]++;
      }
    }
  }
  auto rep = build_report(pairs, options.thresholds, options.epsilon, failed);
  rep.samples = samples.size();
  rep.failures = std::move(failures);
  return rep;
}

}  // namespace counterlens

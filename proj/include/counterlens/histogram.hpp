#pragma once
// Fixed-edge histograms: bins are [lo, hi) except the last, which is [lo, hi].

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

#include "counterlens/errors.hpp"

namespace counterlens {

struct Histogram {
  std::vector<double> edges;  // size = bins + 1, strictly increasing
  std::vector<std::size_t> counts;

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }

  nlohmann::ordered_json to_json() const { return {{"edges", edges}, {"counts", counts}}; }

  std::string to_csv() const {
    std::string out = "lower,upper,count\n";
    for (std::size_t i = 0; i < counts.size(); ++i) {
      out += std::to_string(edges[i]) + "," + std::to_string(edges[i + 1]) + "," +
             std::to_string(counts[i]) + "\n";
    }
    return out;
  }
};

inline Histogram histogram(const std::vector<double>& values, std::vector<double> edges) {
  if (edges.size() < 2) throw DomainError("histogram needs at least two edges");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (!std::isfinite(edges[i])) throw DomainError("histogram edges must be finite");
    if (i > 0 && !(edges[i] > edges[i - 1])) throw DomainError("histogram edges must increase");
  }
  Histogram h{std::move(edges), {}};
  h.counts.assign(h.edges.size() - 1, 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!std::isfinite(v)) throw DataError("non-finite value at index " + std::to_string(i));
    if (v < h.edges.front() || v > h.edges.back()) {
      throw DataError("value at index " + std::to_string(i) + " outside histogram edges");
    }
    auto it = std::upper_bound(h.edges.begin(), h.edges.end(), v);
    auto bin = static_cast<std::size_t>(it - h.edges.begin()) - 1;
    if (bin >= h.counts.size()) bin = h.counts.size() - 1;
    h.counts[bin]++;
  }
  return h;
}

inline std::vector<double> uniform_edges(double lo, double hi, std::size_t bins) {
  if (bins == 0) throw DomainError("histogram needs at least one bin");
  std::vector<double> edges(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) {
    edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  }
  edges.back() = hi;
  return edges;
}

// Equal-width bins over [min, max] of the data; a zero spread widens to [v, v + 1].
inline Histogram histogram(const std::vector<double>& values, std::size_t bins) {
  if (values.empty()) throw DataError("histogram of an empty value set");
  double lo = values.front(), hi = values.front();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw DataError("non-finite value at index " + std::to_string(i));
    lo = std::min(lo, values[i]);
    hi = std::max(hi, values[i]);
  }
  if (!(hi > lo)) hi = lo + 1.0;
  return histogram(values, uniform_edges(lo, hi, bins));
}

}  // namespace counterlens

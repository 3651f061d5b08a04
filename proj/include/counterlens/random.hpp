#pragma once
// Portable sampling helpers. The <random> distributions are implementation-defined,
// so everything that must be reproducible across toolchains goes through these.

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace counterlens {

using Rng = std::mt19937_64;

// Uniform integer in [0, n) by rejection; n must be > 0.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Geometric distribution truncated to {0, ..., n-1}: P(k) proportional to p (1-p)^k.
inline std::size_t truncated_geometric(Rng& rng, double p, std::size_t n) {
  if (n <= 1) return 0;
  double total = 0.0;
  double w = p;
  for (std::size_t k = 0; k < n; ++k, w *= 1.0 - p) total += w;
  double u = uniform_unit(rng) * total;
  w = p;
  for (std::size_t k = 0; k < n; ++k, w *= 1.0 - p) {
    if (u < w) return k;
    u -= w;
  }
  return n - 1;
}

template <class T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[uniform_below(rng, i)]);
  }
}

}  // namespace counterlens

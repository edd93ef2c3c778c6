// SPDX-License-Identifier: Apache-2.0
//
// Seeded random source. std::mt19937_64 output is fully specified by the
// standard, but the standard distributions are not, so the few
// distributions we need are derived here to keep runs reproducible across
// standard libraries.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "dmoe/dense.hpp"

namespace dmoe {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double kTwoPi = 6.283185307179586;
    spare_ = r * std::sin(kTwoPi * u2);
    has_spare_ = true;
    return r * std::cos(kTwoPi * u2);
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n; }

  std::uint64_t next() { return gen_(); }

  DenseMatrix normal_matrix(std::size_t rows, std::size_t cols, double stddev) {
    DenseMatrix m(rows, cols);
    for (double& v : m.data()) v = stddev * normal();
    return m;
  }

  DenseMatrix uniform_matrix(std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
    DenseMatrix m(rows, cols);
    for (double& v : m.data()) v = uniform(lo, hi);
    return m;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Mixes a base seed with a stream id (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace dmoe

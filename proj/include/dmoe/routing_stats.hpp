// SPDX-License-Identifier: Apache-2.0
//
// Drop-fraction statistics for synthetic top-1 routing distributions under
// the keep-earliest capacity rule.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace dmoe {

struct RoutingDistribution {
  enum class Kind { kUniform, kRandom, kZipf, kOnehot };
  Kind kind = Kind::kUniform;
  double zipf_exponent = 0.0;

  // "uniform" (exact round-robin balance), "random" (iid uniform),
  // "zipf:<a>", or "onehot" (every token to expert 0).
  static RoutingDistribution parse(std::string_view text);
  std::string name() const;
};

struct StatsOptions {
  std::size_t num_experts = 64;
  std::size_t tokens = 512;
  std::vector<double> capacity_factors{1.0, 1.5, 2.0};
  RoutingDistribution distribution;
  std::uint64_t seed = 0;
  std::size_t samples = 16;
};

struct CapacityRow {
  double capacity_factor = 0.0;
  std::size_t capacity = 0;
  double mean_drop_fraction = 0.0;
};

struct StatsReport {
  std::vector<CapacityRow> rows;
  std::vector<double> mean_load;  // tokens per expert, averaged over samples
};

// Sample s draws expert ids from an Rng seeded by derive_seed(seed, s).
std::vector<std::size_t> sample_routing(const RoutingDistribution& d, std::size_t num_experts, std::size_t tokens,
                                        std::uint64_t seed);

StatsReport routing_stats(const StatsOptions& options);

void print_stats(std::ostream& os, const StatsOptions& options, const StatsReport& report);

}  // namespace dmoe

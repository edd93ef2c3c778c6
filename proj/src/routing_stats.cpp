// SPDX-License-Identifier: Apache-2.0

#include "dmoe/routing_stats.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "dmoe/csv.hpp"
#include "dmoe/moe.hpp"
#include "dmoe/rng.hpp"

namespace dmoe {

RoutingDistribution RoutingDistribution::parse(std::string_view text) {
  RoutingDistribution d;
  if (text == "uniform") return d;
  if (text == "random") {
    d.kind = Kind::kRandom;
    return d;
  }
  if (text == "onehot") {
    d.kind = Kind::kOnehot;
    return d;
  }
  if (text.substr(0, 5) == "zipf:") {
    const std::string arg(text.substr(5));
    std::size_t used = 0;
    double a = 0.0;
    try {
      a = std::stod(arg, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != arg.size() || !(a >= 0.0) || !std::isfinite(a)) {
      throw std::invalid_argument("bad zipf exponent in '" + std::string(text) + "'");
    }
    d.kind = Kind::kZipf;
    d.zipf_exponent = a;
    return d;
  }
  throw std::invalid_argument("unknown distribution '" + std::string(text) + "'");
}

std::string RoutingDistribution::name() const {
  switch (kind) {
    case Kind::kUniform: return "uniform";
    case Kind::kRandom: return "random";
    case Kind::kZipf: return "zipf:" + format_double(zipf_exponent);
    case Kind::kOnehot: return "onehot";
  }
  return "?";
}

std::vector<std::size_t> sample_routing(const RoutingDistribution& d, std::size_t num_experts, std::size_t tokens,
                                        std::uint64_t seed) {
  std::vector<std::size_t> ids(tokens, 0);
  Rng rng(seed);
  switch (d.kind) {
    case RoutingDistribution::Kind::kUniform:
      for (std::size_t t = 0; t < tokens; ++t) ids[t] = t % num_experts;
      break;
    case RoutingDistribution::Kind::kRandom:
      for (auto& id : ids) id = rng.below(num_experts);
      break;
    case RoutingDistribution::Kind::kZipf: {
      std::vector<double> cdf(num_experts);
      double total = 0.0;
      for (std::size_t e = 0; e < num_experts; ++e) {
        total += std::pow(static_cast<double>(e + 1), -d.zipf_exponent);
        cdf[e] = total;
      }
      for (auto& id : ids) {
        const double u = rng.uniform() * total;
        std::size_t e = 0;
        while (e + 1 < num_experts && u >= cdf[e]) ++e;
        id = e;
      }
      break;
    }
    case RoutingDistribution::Kind::kOnehot:
      break;
  }
  return ids;
}

StatsReport routing_stats(const StatsOptions& o) {
  if (o.num_experts == 0 || o.tokens == 0 || o.samples == 0) {
    throw std::invalid_argument("stats: num_experts, tokens and samples must be positive");
  }
  for (double cf : o.capacity_factors) {
    if (!(cf > 0.0) || !std::isfinite(cf)) throw std::invalid_argument("stats: capacity factors must be positive");
  }
  StatsReport report;
  report.mean_load.assign(o.num_experts, 0.0);
  for (double cf : o.capacity_factors) {
    report.rows.push_back({cf, expert_capacity(o.tokens, o.num_experts, cf), 0.0});
  }
  MoEConfig cfg;
  cfg.num_experts = o.num_experts;
  cfg.top_k = 1;
  cfg.block_size = 1;
  cfg.ffn_hidden_size = 1;
  for (std::size_t s = 0; s < o.samples; ++s) {
    const auto ids = sample_routing(o.distribution, o.num_experts, o.tokens, derive_seed(o.seed, s));
    const RouterAssignment a = fixed_assignment(ids, 1, o.num_experts);
    for (std::size_t id : ids) report.mean_load[id] += 1.0;
    for (auto& row : report.rows) {
      cfg.capacity_factor = row.capacity_factor;
      row.mean_drop_fraction += make_permutation(a, cfg, o.tokens).drop_fraction();
    }
  }
  const double n = static_cast<double>(o.samples);
  for (auto& row : report.rows) row.mean_drop_fraction /= n;
  for (auto& l : report.mean_load) l /= n;
  return report;
}

void print_stats(std::ostream& os, const StatsOptions& o, const StatsReport& r) {
  os << "# distribution=" << o.distribution.name() << " num_experts=" << o.num_experts << " tokens=" << o.tokens
     << " samples=" << o.samples << " seed=" << o.seed << '\n';
  os << "capacity_factor,capacity,mean_drop_fraction\n";
  for (const auto& row : r.rows) {
    os << format_double(row.capacity_factor) << ',' << row.capacity << ',' << format_double(row.mean_drop_fraction)
       << '\n';
  }
  os << "expert,mean_load\n";
  for (std::size_t e = 0; e < r.mean_load.size(); ++e) os << e << ',' << format_double(r.mean_load[e]) << '\n';
}

}  // namespace dmoe

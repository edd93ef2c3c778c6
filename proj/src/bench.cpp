// SPDX-License-Identifier: Apache-2.0

#include "dmoe/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "dmoe/csv.hpp"
#include "dmoe/instrumentation.hpp"
#include "dmoe/moe.hpp"
#include "dmoe/rng.hpp"
#include "dmoe/sparse_kernels.hpp"

namespace dmoe {

namespace {

std::size_t blocks_of(std::size_t dim, std::size_t bs, const char* what) {
  if (bs == 0 || dim == 0 || dim % bs != 0) {
    throw std::invalid_argument(std::string("bench: ") + what + "=" + std::to_string(dim) +
                                " must be a positive multiple of block_size=" + std::to_string(bs));
  }
  return dim / bs;
}

// Exactly round(density * grid) blocks at random positions, so scaling the
// density scales nnz_blocks exactly.
TopologyPtr random_topology_exact(std::size_t nbr, std::size_t nbc, std::size_t bs, double density, Rng& rng) {
  if (!(density >= 0.0 && density <= 1.0)) throw std::invalid_argument("bench: density must be in [0, 1]");
  const std::size_t cells = nbr * nbc;
  const auto nnz = static_cast<std::size_t>(std::llround(density * static_cast<double>(cells)));
  std::vector<std::size_t> idx(cells);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < nnz; ++i) std::swap(idx[i], idx[i + rng.below(cells - i)]);
  std::vector<BlockCoord> coords;
  for (std::size_t i = 0; i < nnz; ++i) coords.push_back({idx[i] / nbc, idx[i] % nbc});
  return share(topology_from_blocks(coords, nbr, nbc, bs));
}

MoEConfig preset_config(std::string_view preset, std::size_t block_size) {
  MoEConfig c = moe_preset(preset);
  c.block_size = block_size;
  c.validate();
  return c;
}

// Uniform top-1 routing: token t goes to expert t mod E.
TopologyPtr preset_topology(const MoEConfig& c, std::size_t tokens) {
  std::vector<std::size_t> ids(tokens);
  for (std::size_t t = 0; t < tokens; ++t) ids[t] = t % c.num_experts;
  const RouterAssignment a = fixed_assignment(ids, 1, c.num_experts);
  return share(moe_topology(make_permutation(a, c, tokens), c));
}

}  // namespace

BenchKind parse_bench_kind(std::string_view name) {
  if (name == "sdd") return BenchKind::kSdd;
  if (name == "dsd") return BenchKind::kDsd;
  if (name == "dds") return BenchKind::kDds;
  if (name == "dmoe") return BenchKind::kDmoe;
  throw std::invalid_argument("unknown bench kind '" + std::string(name) + "'");
}

std::string_view bench_kind_name(BenchKind kind) {
  switch (kind) {
    case BenchKind::kSdd: return "sdd";
    case BenchKind::kDsd: return "dsd";
    case BenchKind::kDds: return "dds";
    case BenchKind::kDmoe: return "dmoe";
  }
  return "?";
}

BenchProblem preset_problem(BenchKind kind, std::string_view preset, std::size_t tokens, std::size_t block_size) {
  const MoEConfig c = preset_config(preset, block_size);
  if (tokens == 0) throw std::invalid_argument("bench: tokens must be positive");
  std::size_t padded = 0;
  for (std::size_t e = 0; e < c.num_experts; ++e) {
    const std::size_t count = tokens / c.num_experts + (e < tokens % c.num_experts ? 1 : 0);
    padded += (count + block_size - 1) / block_size * block_size;
  }
  BenchProblem p;
  p.kind = kind;
  p.block_size = block_size;
  p.preset = std::string(preset);
  p.tokens = tokens;
  p.num_experts = c.num_experts;
  p.ffn_hidden_size = c.ffn_hidden_size;
  const std::size_t hidden = c.hidden_size;
  const std::size_t inner = c.inner_dim();
  switch (kind) {
    case BenchKind::kSdd: p.m = padded, p.k = hidden, p.n = inner; break;
    case BenchKind::kDsd: p.m = padded, p.k = inner, p.n = hidden; break;
    case BenchKind::kDds: p.m = hidden, p.k = padded, p.n = inner; break;
    case BenchKind::kDmoe: p.m = tokens, p.k = hidden, p.n = inner; break;
  }
  return p;
}

BenchRow run_bench(const BenchProblem& p, std::size_t reps, std::size_t warmup) {
  const std::size_t bs = p.block_size;
  Rng rng(derive_seed(p.seed, 7));
  std::optional<MoEConfig> preset_cfg;
  if (p.preset) preset_cfg = preset_config(*p.preset, bs);

  BenchRow row;
  row.name = std::string(bench_kind_name(p.kind)) + (p.preset ? "_" + *p.preset : "");
  row.m = p.m;
  row.k = p.k;
  row.n = p.n;
  row.block_size = bs;
  row.reps = reps;

  std::function<void()> op;
  // Operands live here so the closure can reference them.
  DenseMatrix a, b;
  std::optional<BlockSparseMatrix> s;
  TopologyPtr topo;
  MoEConfig moe_cfg;
  MoEWeights weights;

  switch (p.kind) {
    case BenchKind::kSdd:
      topo = preset_cfg ? preset_topology(*preset_cfg, p.tokens)
                        : random_topology_exact(blocks_of(p.m, bs, "m"), blocks_of(p.n, bs, "n"), bs, p.density, rng);
      a = rng.uniform_matrix(p.m, p.k);
      b = rng.uniform_matrix(p.k, p.n);
      row.nnz_blocks = topo->nnz_blocks();
      op = [&] { (void)sdd(a, b, topo); };
      break;
    case BenchKind::kDsd:
      topo = preset_cfg ? preset_topology(*preset_cfg, p.tokens)
                        : random_topology_exact(blocks_of(p.m, bs, "m"), blocks_of(p.k, bs, "k"), bs, p.density, rng);
      s.emplace(topo);
      for (double& v : s->values()) v = rng.uniform(-1.0, 1.0);
      b = rng.uniform_matrix(p.k, p.n);
      row.nnz_blocks = topo->nnz_blocks();
      op = [&] { (void)dsd(*s, b); };
      break;
    case BenchKind::kDds:
      topo = preset_cfg ? preset_topology(*preset_cfg, p.tokens)
                        : random_topology_exact(blocks_of(p.k, bs, "k"), blocks_of(p.n, bs, "n"), bs, p.density, rng);
      s.emplace(topo);
      for (double& v : s->values()) v = rng.uniform(-1.0, 1.0);
      a = rng.uniform_matrix(p.m, p.k);
      row.nnz_blocks = topo->nnz_blocks();
      op = [&] { (void)dds(a, *s); };
      break;
    case BenchKind::kDmoe: {
      if (preset_cfg) {
        moe_cfg = *preset_cfg;
      } else {
        moe_cfg.hidden_size = p.k;
        moe_cfg.num_experts = p.num_experts;
        moe_cfg.ffn_hidden_size = p.ffn_hidden_size;
        moe_cfg.block_size = bs;
        if (moe_cfg.num_experts == 0 || moe_cfg.inner_dim() != p.n) {
          throw std::invalid_argument("bench dmoe: n must equal num_experts * ffn_hidden_size");
        }
        moe_cfg.validate();
      }
      weights = MoEWeights::random(moe_cfg, rng.next());
      a = rng.normal_matrix(p.m, p.k, 1.0);
      row.nnz_blocks = dmoe_forward(a, weights, moe_cfg).cache.topology->nnz_blocks();
      op = [&] { (void)dmoe_forward(a, weights, moe_cfg); };
      break;
    }
  }
  if (reps == 0) return row;

  for (std::size_t i = 0; i < warmup; ++i) op();
  std::vector<double> times;
  times.reserve(reps);
  std::uint64_t flops = 0;
  for (std::size_t i = 0; i < reps; ++i) {
    const auto before = CounterSnapshot::take();
    const auto t0 = std::chrono::steady_clock::now();
    op();
    const auto t1 = std::chrono::steady_clock::now();
    flops = (CounterSnapshot::take() - before).sparse_flops;
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  const double mean = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(reps);
  double var = 0.0;
  for (double t : times) var += (t - mean) * (t - mean);
  row.mean_s = mean;
  row.std_s = reps > 1 ? std::sqrt(var / static_cast<double>(reps - 1)) : 0.0;
  row.flops = flops;
  row.gflops = mean > 0.0 ? static_cast<double>(flops) / mean / 1e9 : 0.0;
  return row;
}

void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << kBenchCsvHeader << '\n';
  for (const auto& r : rows) {
    os << r.name << ',' << r.m << ',' << r.k << ',' << r.n << ',' << r.block_size << ',' << r.nnz_blocks << ','
       << r.reps << ',' << format_double(r.mean_s) << ',' << format_double(r.std_s) << ','
       << format_double(r.gflops) << '\n';
  }
}

}  // namespace dmoe

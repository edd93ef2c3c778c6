// SPDX-License-Identifier: Apache-2.0
//
// Kernel and layer micro-benchmarks. Operands and topology metadata are
// built before the timed region; only the product itself is timed.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dmoe {

enum class BenchKind { kSdd, kDsd, kDds, kDmoe };

BenchKind parse_bench_kind(std::string_view name);
std::string_view bench_kind_name(BenchKind kind);

// Shapes of one problem. For sdd, (m x k) * (k x n) sampled at a sparse
// m x n output; dsd multiplies a sparse m x k by a dense k x n; dds a dense
// m x k by a sparse k x n; dmoe runs the full forward with m tokens,
// k = hidden_size and n = num_experts * ffn_hidden_size.
struct BenchProblem {
  BenchKind kind = BenchKind::kSdd;
  std::size_t m = 0;
  std::size_t k = 0;
  std::size_t n = 0;
  std::size_t block_size = 1;
  double density = 1.0;               // random topologies
  std::optional<std::string> preset;  // block-diagonal MoE topology instead
  std::size_t tokens = 0;             // preset: tokens before padding
  std::size_t num_experts = 0;        // preset / dmoe
  std::size_t ffn_hidden_size = 0;    // preset / dmoe
  std::uint64_t seed = 0;
};

// Expands a preset into concrete shapes for the given kind and block size:
// tokens are spread uniformly over the preset's experts and each group is
// padded to the block size.
BenchProblem preset_problem(BenchKind kind, std::string_view preset, std::size_t tokens, std::size_t block_size);

struct BenchRow {
  std::string name;
  std::size_t m = 0;
  std::size_t k = 0;
  std::size_t n = 0;
  std::size_t block_size = 0;
  std::size_t nnz_blocks = 0;
  std::size_t reps = 0;
  double mean_s = 0.0;
  double std_s = 0.0;
  double gflops = 0.0;
  std::uint64_t flops = 0;  // per repetition, as counted by the kernels
};

inline constexpr std::string_view kBenchCsvHeader = "name,m,k,n,block_size,nnz_blocks,reps,mean_s,std_s,gflops";

// Runs `warmup` untimed then `reps` timed repetitions on a monotonic clock.
// With reps == 0 only the operands are built (shape check).
BenchRow run_bench(const BenchProblem& problem, std::size_t reps, std::size_t warmup = 3);

void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows);

}  // namespace dmoe

// SPDX-License-Identifier: Apache-2.0
//
// Seeded generators for randomized kernel and MoE cases. Shared by the
// validation command and the test suites so a failing seed printed by one
// can be replayed in the other.

#pragma once

#include <cstdint>
#include <string>

#include "dmoe/block_sparse.hpp"
#include "dmoe/dense.hpp"
#include "dmoe/moe.hpp"
#include "dmoe/rng.hpp"

namespace dmoe::testing {

inline constexpr std::size_t kBlockSizes[] = {1, 2, 4, 8};

// Each block present independently with probability `density`.
BlockTopology random_topology(Rng& rng, std::size_t n_block_rows, std::size_t n_block_cols, std::size_t block_size,
                              double density);

// Random matrix whose *effective* shape after `t` is rows x cols.
DenseMatrix random_operand(Rng& rng, std::size_t rows, std::size_t cols, Transpose t);

BlockSparseMatrix random_sparse(Rng& rng, TopologyPtr topology);

enum class KernelKind { kSdd, kDsd, kDds };
const char* kernel_name(KernelKind kind);

// One randomized product instance with logical dimensions up to 64.
struct KernelCase {
  KernelKind kind = KernelKind::kSdd;
  std::uint64_t seed = 0;
  std::size_t block_size = 1;
  Transpose transpose_dense = Transpose::kNo;
  Transpose transpose_other = Transpose::kNo;  // second dense operand (sdd) or the sparse one
  DenseMatrix dense;                           // a for sdd/dds, b for dsd
  DenseMatrix dense_b;                         // b for sdd, unused otherwise
  TopologyPtr topology;                        // output topology (sdd) or sparse operand topology
  BlockSparseMatrix sparse{share(topology_from_blocks({}, 0, 0, 1))};

  std::string describe() const;
};

KernelCase random_kernel_case(KernelKind kind, std::uint64_t seed);

// Runs the kernel and the matching dense oracle; returns max-abs error.
double kernel_case_error(const KernelCase& c);

// Small MoE instance for equivalence and gradient checks.
struct MoECase {
  MoEConfig config;
  DenseMatrix x;
  MoEWeights weights;
};

enum class RoutingSkew { kUniform, kSkewed };

// E <= 8, top_k in {1, 2}, block_size in {1, 2, 4}; skewed routing biases the
// router towards expert 0.
MoECase random_moe_case(std::uint64_t seed, RoutingSkew skew);

// The small gradient-check shape: E=3, hidden=4, ffn=4, block_size=2,
// 12 tokens. top_k alternates between 1 and 2 with the seed; gate
// renormalization is exercised on top-2 instances.
MoECase gradient_case(std::uint64_t seed, Activation activation);

struct GradientCheck {
  double dx = 0.0;
  double router_w = 0.0;
  double w1 = 0.0;
  double w2 = 0.0;
  double worst() const;
};

// Loss = sum(y^2) + aux loss; compares dmoe_backward with central
// differences at step h using oracle::max_rel_error.
GradientCheck check_gradients(const MoECase& c, double h = 1e-5);

}  // namespace dmoe::testing

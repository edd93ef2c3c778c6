// SPDX-License-Identifier: Apache-2.0
//
// Brute-force references. Nothing here calls into the kernels or the MoE
// pipeline: products are plain triple loops, routing and the expert MLPs are
// re-derived per expert without padding or blocks.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dmoe/block_sparse.hpp"
#include "dmoe/dense.hpp"
#include "dmoe/moe.hpp"

namespace dmoe::oracle {

// op(a) * op(b) with an independent i-j-p loop.
DenseMatrix naive_matmul(const DenseMatrix& a, const DenseMatrix& b, Transpose transpose_a = Transpose::kNo,
                         Transpose transpose_b = Transpose::kNo);

// op(a) * op(b), then zero every block outside the topology.
DenseMatrix masked_matmul_oracle(const DenseMatrix& a, const DenseMatrix& b, const BlockTopology& topology,
                                 Transpose transpose_a = Transpose::kNo, Transpose transpose_b = Transpose::kNo);

// Coordinates of the transposed pattern, sorted row-major, found by sorting
// swapped coordinates rather than through the transpose index.
std::vector<BlockCoord> explicit_transpose_coords(const BlockTopology& topology);

// Dense MoE evaluated one expert at a time over only its own tokens.
// Honors config.capacity_factor with the keep-earliest rule.
DenseMatrix per_expert_moe_oracle(const DenseMatrix& x, const MoEWeights& w, const MoEConfig& config);

// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h for every coordinate.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& loss,
                                     std::span<const double> params, double h);

// Same, perturbing `param` in place and calling `loss()`; `param` is restored.
DenseMatrix finite_diff_grad(DenseMatrix& param, const std::function<double()>& loss, double h);

// max_i |a_i - b_i| / max(1e-8, |a_i|, |b_i|).
double max_rel_error(std::span<const double> a, std::span<const double> b);
double max_rel_error(const DenseMatrix& a, const DenseMatrix& b);

}  // namespace dmoe::oracle

// SPDX-License-Identifier: Apache-2.0
//
// Mixture-of-Experts layer on top of the block-sparse kernels.
//
// Pipeline (forward):
//   1. router_forward     softmax(x * router_w), greedy top-k per token
//   2. make_permutation   group (token, slot) pairs by expert, pad each
//                         group to a multiple of block_size; in capacity
//                         mode the overflow is dropped
//   3. moe_topology       block-diagonal layout with variable-height blocks
//   4. padded_gather      permute tokens into expert-grouped rows
//   5. sdd -> activation -> dsd
//   6. padded_scatter     un-permute and sum gate-weighted expert outputs
//
// Experts are bias-free two-layer MLPs. Expert e owns columns
// [e*ffn, (e+1)*ffn) of w1 and the same rows of w2.

#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "dmoe/block_sparse.hpp"
#include "dmoe/dense.hpp"

namespace dmoe {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MoEConfig {
  std::size_t hidden_size = 16;
  std::size_t ffn_hidden_size = 32;
  std::size_t num_experts = 4;
  std::size_t top_k = 1;
  std::size_t block_size = 4;
  Activation activation = Activation::kGelu;
  std::optional<double> capacity_factor;  // empty means dropless
  double aux_loss_coefficient = 0.01;
  bool renormalize_gates = false;

  bool dropless() const { return !capacity_factor.has_value(); }
  std::size_t inner_dim() const { return num_experts * ffn_hidden_size; }
  std::size_t ffn_blocks() const { return ffn_hidden_size / block_size; }

  // Throws ConfigError on any violated constraint.
  void validate() const;
};

// Model shapes for the xs/small/medium presets (64 experts, top-1,
// ffn_hidden_size = 4 * hidden_size, 128x128 blocks).
MoEConfig moe_preset(std::string_view name);

struct RouterAssignment {
  std::size_t num_tokens = 0;
  std::size_t top_k = 0;
  std::vector<std::size_t> expert_ids;  // num_tokens * top_k, descending score per token
  std::vector<double> gates;            // num_tokens * top_k
  DenseMatrix probs;                    // num_tokens x num_experts

  std::size_t num_experts() const { return probs.cols(); }
  std::size_t expert(std::size_t token, std::size_t slot) const { return expert_ids[token * top_k + slot]; }
  double gate(std::size_t token, std::size_t slot) const { return gates[token * top_k + slot]; }
};

RouterAssignment router_forward(const DenseMatrix& x, const DenseMatrix& router_w, std::size_t top_k,
                                bool renormalize_gates = false);

// Builds an assignment from explicit per-token expert choices; probs are
// one-hot-ish placeholders with the given gates. Used by routing statistics
// and tests that need a fixed routing.
RouterAssignment fixed_assignment(std::span<const std::size_t> expert_ids, std::size_t top_k,
                                  std::size_t num_experts, double gate = 1.0);

// ceil(num_tokens * capacity_factor / num_experts); quotients within 1e-9 of
// an integer are treated as exact.
std::size_t expert_capacity(std::size_t num_tokens, std::size_t num_experts, double capacity_factor);

struct Slot {
  std::size_t token = 0;
  std::size_t slot = 0;
  friend bool operator==(const Slot&, const Slot&) = default;
};

struct PermutationPlan {
  static constexpr std::size_t kDropped = std::numeric_limits<std::size_t>::max();

  std::size_t num_tokens = 0;
  std::size_t top_k = 0;
  std::size_t block_size = 1;
  std::optional<std::size_t> capacity;      // set in capacity mode
  std::vector<std::size_t> counts;          // kept assignments per expert
  std::vector<std::size_t> padded_counts;   // counts rounded up to block_size
  std::vector<std::size_t> padded_offsets;  // exclusive prefix sum, num_experts + 1
  std::vector<Slot> gather_order;           // kept pairs grouped by expert
  std::vector<std::size_t> gather_rows;     // padded row of each gather_order entry
  std::vector<Slot> dropped;
  std::vector<std::size_t> row_of;          // per token*top_k + slot: padded row or kDropped
  std::size_t total_padded_rows = 0;

  std::size_t num_experts() const { return counts.size(); }
  std::size_t row(std::size_t token, std::size_t slot) const { return row_of[token * top_k + slot]; }
  double drop_fraction() const;
};

PermutationPlan make_permutation(const RouterAssignment& assignment, const MoEConfig& config,
                                 std::size_t num_tokens);

DenseMatrix padded_gather(const DenseMatrix& x, const PermutationPlan& plan);

// out[t] = sum over kept slots of gate * y[row(t, slot)].
DenseMatrix padded_scatter(const DenseMatrix& y, const PermutationPlan& plan,
                           const RouterAssignment& assignment);

// Unweighted scatter, the exact inverse of padded_gather for top-1 dropless plans.
DenseMatrix padded_scatter_unweighted(const DenseMatrix& y, const PermutationPlan& plan);

BlockTopology moe_topology(const PermutationPlan& plan, const MoEConfig& config);

struct MoEWeights {
  DenseMatrix router_w;  // hidden x num_experts
  DenseMatrix w1;        // hidden x (num_experts * ffn)
  DenseMatrix w2;        // (num_experts * ffn) x hidden

  static MoEWeights zeros(const MoEConfig& config);
  // Gaussian init: router_w ~ N(0, router_std^2), w1 ~ N(0, 1/hidden),
  // w2 ~ N(0, 1/ffn).
  static MoEWeights random(const MoEConfig& config, std::uint64_t seed, double router_std = 0.5);

  // Throws ShapeError when shapes do not match the config.
  void check(const MoEConfig& config) const;
};

using MoEGrads = MoEWeights;

struct MoECache {
  MoEConfig config;
  RouterAssignment assignment;
  PermutationPlan plan;
  TopologyPtr topology;
  DenseMatrix x;
  DenseMatrix x_gathered;
  BlockSparseMatrix h_pre;
  BlockSparseMatrix h_post;
  DenseMatrix y_gathered;
};

struct MoEForward {
  DenseMatrix y;
  MoECache cache;
};

struct DropStats {
  std::vector<double> per_expert;  // dropped / assigned, 0 for unassigned experts
  double overall = 0.0;            // dropped / all assignments
  std::size_t dropped = 0;
  std::size_t assignments = 0;
};

struct MoEDroppingForward {
  DenseMatrix y;
  MoECache cache;
  DropStats drop_stats;
};

struct MoEBackward {
  DenseMatrix dx;
  MoEGrads grads;
};

// Dropless forward. config.capacity_factor is ignored.
MoEForward dmoe_forward(const DenseMatrix& x, const MoEWeights& w, const MoEConfig& config);

// Token-dropping forward; requires a finite capacity_factor.
MoEDroppingForward moe_dropping_forward(const DenseMatrix& x, const MoEWeights& w, const MoEConfig& config);

DropStats drop_stats(const PermutationPlan& plan, const RouterAssignment& assignment);

// Backward pass for either forward flavour. `extra_dprobs`, when given, is an
// additional gradient with respect to the router probabilities (for example
// from load_balance_loss) folded into the router gradient.
MoEBackward dmoe_backward(const DenseMatrix& dy, const MoECache& cache, const MoEWeights& w);
MoEBackward dmoe_backward(const DenseMatrix& dy, const MoECache& cache, const MoEWeights& w,
                          const DenseMatrix& extra_dprobs);

struct AuxLoss {
  double loss = 0.0;
  DenseMatrix dprobs;  // d loss / d probs, top-1 fractions held constant
};

// coefficient * E * sum_e f_e * P_e, with f_e the fraction of tokens whose
// top-1 expert is e and P_e the mean router probability of e.
AuxLoss load_balance_loss(const RouterAssignment& assignment, const MoEConfig& config);

}  // namespace dmoe

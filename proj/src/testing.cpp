// SPDX-License-Identifier: Apache-2.0

#include "dmoe/testing.hpp"

#include <algorithm>
#include <sstream>

#include "dmoe/oracles.hpp"
#include "dmoe/sparse_kernels.hpp"

namespace dmoe::testing {

namespace {

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

}  // namespace

BlockTopology random_topology(Rng& rng, std::size_t n_block_rows, std::size_t n_block_cols, std::size_t block_size,
                              double density) {
  std::vector<BlockCoord> coords;
  for (std::size_t r = 0; r < n_block_rows; ++r) {
    for (std::size_t c = 0; c < n_block_cols; ++c) {
      if (rng.uniform() < density) coords.push_back({r, c});
    }
  }
  return topology_from_blocks(coords, n_block_rows, n_block_cols, block_size);
}

DenseMatrix random_operand(Rng& rng, std::size_t rows, std::size_t cols, Transpose t) {
  return t == Transpose::kYes ? rng.uniform_matrix(cols, rows) : rng.uniform_matrix(rows, cols);
}

BlockSparseMatrix random_sparse(Rng& rng, TopologyPtr topology) {
  BlockSparseMatrix s(std::move(topology));
  for (double& v : s.values()) v = rng.uniform(-1.0, 1.0);
  return s;
}

const char* kernel_name(KernelKind kind) {
  switch (kind) {
    case KernelKind::kSdd: return "sdd";
    case KernelKind::kDsd: return "dsd";
    case KernelKind::kDds: return "dds";
  }
  return "?";
}

std::string KernelCase::describe() const {
  std::ostringstream os;
  os << kernel_name(kind) << " seed=" << seed << " bs=" << block_size << " grid=" << topology->n_block_rows() << "x"
     << topology->n_block_cols() << " nnz=" << topology->nnz_blocks()
     << " t_dense=" << (transpose_dense == Transpose::kYes) << " t_other=" << (transpose_other == Transpose::kYes);
  return os.str();
}

KernelCase random_kernel_case(KernelKind kind, std::uint64_t seed) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(kind)));
  KernelCase c;
  c.kind = kind;
  c.seed = seed;
  c.block_size = kBlockSizes[rng.below(4)];
  const std::size_t max_blocks = 64 / c.block_size;
  const std::size_t n_block_rows = pick(rng, 1, max_blocks);
  const std::size_t n_block_cols = pick(rng, 1, max_blocks);
  const double density = rng.uniform();
  c.topology = share(random_topology(rng, n_block_rows, n_block_cols, c.block_size, density));
  c.transpose_dense = as_transpose(rng.below(2) == 1);
  c.transpose_other = as_transpose(rng.below(2) == 1);
  const std::size_t free_dim = pick(rng, 1, 64);
  const auto& t = *c.topology;
  switch (kind) {
    case KernelKind::kSdd:
      c.dense = random_operand(rng, t.rows(), free_dim, c.transpose_dense);
      c.dense_b = random_operand(rng, free_dim, t.cols(), c.transpose_other);
      break;
    case KernelKind::kDsd: {
      c.sparse = random_sparse(rng, c.topology);
      const std::size_t inner = c.transpose_other == Transpose::kYes ? t.rows() : t.cols();
      c.dense = random_operand(rng, inner, free_dim, c.transpose_dense);
      break;
    }
    case KernelKind::kDds: {
      c.sparse = random_sparse(rng, c.topology);
      const std::size_t inner = c.transpose_other == Transpose::kYes ? t.cols() : t.rows();
      c.dense = random_operand(rng, free_dim, inner, c.transpose_dense);
      break;
    }
  }
  return c;
}

double kernel_case_error(const KernelCase& c) {
  switch (c.kind) {
    case KernelKind::kSdd: {
      const auto got = to_dense(sdd(c.dense, c.dense_b, c.topology, c.transpose_dense, c.transpose_other));
      return max_abs_diff(got, oracle::masked_matmul_oracle(c.dense, c.dense_b, *c.topology, c.transpose_dense,
                                                            c.transpose_other));
    }
    case KernelKind::kDsd: {
      const auto got = dsd(c.sparse, c.dense, c.transpose_other, c.transpose_dense);
      return max_abs_diff(got, oracle::naive_matmul(to_dense(c.sparse), c.dense, c.transpose_other, c.transpose_dense));
    }
    case KernelKind::kDds: {
      const auto got = dds(c.dense, c.sparse, c.transpose_dense, c.transpose_other);
      return max_abs_diff(got, oracle::naive_matmul(c.dense, to_dense(c.sparse), c.transpose_dense, c.transpose_other));
    }
  }
  return 0.0;
}

MoECase random_moe_case(std::uint64_t seed, RoutingSkew skew) {
  Rng rng(derive_seed(seed, 100));
  MoECase c;
  c.config.num_experts = pick(rng, 1, 8);
  c.config.top_k = std::min<std::size_t>(pick(rng, 1, 2), c.config.num_experts);
  c.config.block_size = std::size_t{1} << rng.below(3);
  c.config.ffn_hidden_size = c.config.block_size * pick(rng, 1, 3);
  c.config.hidden_size = pick(rng, 1, 8);
  c.config.activation = static_cast<Activation>(rng.below(3));
  c.config.renormalize_gates = rng.below(2) == 1;
  const std::size_t tokens = pick(rng, 1, 40);
  c.x = rng.normal_matrix(tokens, c.config.hidden_size, 1.0);
  c.weights = MoEWeights::random(c.config, rng.next(), 1.0);
  if (skew == RoutingSkew::kSkewed) {
    // A positive first feature plus a large router weight pulls most tokens
    // to expert 0.
    for (std::size_t t = 0; t < tokens; ++t) c.x(t, 0) = 1.0 + 0.1 * std::abs(c.x(t, 0));
    c.weights.router_w(0, 0) += 4.0;
  }
  return c;
}

MoECase gradient_case(std::uint64_t seed, Activation activation) {
  Rng rng(derive_seed(seed, 200));
  MoECase c;
  c.config.num_experts = 3;
  c.config.hidden_size = 4;
  c.config.ffn_hidden_size = 4;
  c.config.block_size = 2;
  c.config.top_k = 1 + seed % 2;
  c.config.activation = activation;
  // With top_k == 1 renormalized gates are identically 1, leaving only the
  // tiny aux-loss gradient on the router, which sits at the finite
  // difference noise floor.
  c.config.renormalize_gates = c.config.top_k == 2 && rng.below(2) == 1;
  // Central differences at h = 1e-5 lose roughly eps * |loss| / h to
  // rounding, so inputs are kept small enough that the loss stays O(1).
  c.x = rng.normal_matrix(12, 4, 0.5);
  c.weights = MoEWeights::random(c.config, rng.next(), 1.0);
  return c;
}

double GradientCheck::worst() const { return std::max({dx, router_w, w1, w2}); }

GradientCheck check_gradients(const MoECase& c, double h) {
  DenseMatrix x = c.x;
  MoEWeights w = c.weights;
  auto loss = [&] {
    const MoEForward f = dmoe_forward(x, w, c.config);
    return sum_squares(f.y) + load_balance_loss(f.cache.assignment, c.config).loss;
  };
  const MoEForward f = dmoe_forward(x, w, c.config);
  const AuxLoss aux = load_balance_loss(f.cache.assignment, c.config);
  const MoEBackward b = dmoe_backward(scale(f.y, 2.0), f.cache, w, aux.dprobs);

  GradientCheck g;
  g.dx = oracle::max_rel_error(b.dx, oracle::finite_diff_grad(x, loss, h));
  g.router_w = oracle::max_rel_error(b.grads.router_w, oracle::finite_diff_grad(w.router_w, loss, h));
  g.w1 = oracle::max_rel_error(b.grads.w1, oracle::finite_diff_grad(w.w1, loss, h));
  g.w2 = oracle::max_rel_error(b.grads.w2, oracle::finite_diff_grad(w.w2, loss, h));
  return g;
}

}  // namespace dmoe::testing

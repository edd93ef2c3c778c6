// SPDX-License-Identifier: Apache-2.0

#include <vector>

#include "doctest.h"
#include "dmoe/oracles.hpp"
#include "dmoe/sparse_kernels.hpp"
#include "dmoe/testing.hpp"

using namespace dmoe;

TEST_CASE("masked oracle with a dense topology is a plain matmul") {
  Rng rng(1);
  std::vector<BlockCoord> all;
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) all.push_back({r, c});
  const BlockTopology full = topology_from_blocks(all, 2, 3, 2);
  const DenseMatrix a = rng.uniform_matrix(4, 5), b = rng.uniform_matrix(5, 6);
  CHECK(oracle::masked_matmul_oracle(a, b, full) == oracle::naive_matmul(a, b));
}

TEST_CASE("masked oracle with an empty topology is zero") {
  Rng rng(2);
  const BlockTopology empty = topology_from_blocks({}, 2, 3, 2);
  CHECK(oracle::masked_matmul_oracle(rng.uniform_matrix(4, 5), rng.uniform_matrix(5, 6), empty) == DenseMatrix(4, 6));
}

TEST_CASE("masked oracle agrees with sdd on random cases") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto c = testing::random_kernel_case(testing::KernelKind::kSdd, seed);
    CHECK(testing::kernel_case_error(c) <= 1e-10);
  }
}

TEST_CASE("explicit transpose coordinates") {
  const std::vector<BlockCoord> coords{{0, 0}, {0, 2}, {1, 1}};
  const BlockTopology t = topology_from_blocks(coords, 2, 3, 1);
  CHECK(oracle::explicit_transpose_coords(t) == std::vector<BlockCoord>{{0, 0}, {1, 1}, {2, 0}});
}

TEST_CASE("finite differences of p'p give 2p") {
  const std::vector<double> p{0.5, -1.25, 3.0};
  auto f = [](std::span<const double> v) {
    double s = 0;
    for (double x : v) s += x * x;
    return s;
  };
  const std::vector<double> g = oracle::finite_diff_grad(f, p, 1e-5);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(g[i] == doctest::Approx(2 * p[i]).epsilon(1e-9));
}

TEST_CASE("finite differences of a constant are zero") {
  const std::vector<double> p{1.0, 2.0};
  const std::vector<double> g = oracle::finite_diff_grad([](std::span<const double>) { return 4.0; }, p, 1e-5);
  CHECK(g == std::vector<double>{0.0, 0.0});
}

TEST_CASE("matrix finite differences restore the parameter") {
  DenseMatrix m(2, 2, {1, 2, 3, 4});
  const DenseMatrix saved = m;
  const DenseMatrix g = oracle::finite_diff_grad(m, [&] { return sum_squares(m); }, 1e-5);
  CHECK(m == saved);
  CHECK(oracle::max_rel_error(g, scale(saved, 2.0)) <= 1e-9);
}

TEST_CASE("relative error metric floors the denominator at 1e-8") {
  const std::vector<double> a{1.0, 0.0, 1e-12};
  const std::vector<double> b{1.0 + 1e-6, 1e-10, 0.0};
  CHECK(oracle::max_rel_error(std::span<const double>(a).first(1), std::span<const double>(b).first(1)) ==
        doctest::Approx(1e-6 / (1.0 + 1e-6)));
  CHECK(oracle::max_rel_error(std::span<const double>(a).subspan(1, 1), std::span<const double>(b).subspan(1, 1)) ==
        doctest::Approx(1e-2));
  CHECK(oracle::max_rel_error(std::span<const double>(a).subspan(2), std::span<const double>(b).subspan(2)) ==
        doctest::Approx(1e-4));
}

TEST_CASE("per-expert oracle with one expert is a dense MLP") {
  MoEConfig c;
  c.num_experts = 1;
  c.hidden_size = 2;
  c.ffn_hidden_size = 2;
  c.block_size = 1;
  c.activation = Activation::kIdentity;
  MoEWeights w = MoEWeights::zeros(c);
  w.w1 = DenseMatrix(2, 2, {1, 2, 3, 4});
  w.w2 = DenseMatrix(2, 2, {1, 0, 0, 1});
  const DenseMatrix x(1, 2, {1, 1});
  CHECK(oracle::per_expert_moe_oracle(x, w, c) == DenseMatrix(1, 2, {4, 6}));
}

TEST_CASE("per-expert oracle honors capacity with keep-earliest") {
  MoEConfig c;
  c.num_experts = 2;
  c.hidden_size = 1;
  c.ffn_hidden_size = 1;
  c.block_size = 1;
  c.activation = Activation::kIdentity;
  c.capacity_factor = 1.0;  // capacity 2 of 4 tokens per expert
  MoEWeights w = MoEWeights::zeros(c);
  w.router_w = DenseMatrix(1, 2, {1.0, 0.0});  // positive x prefers expert 0
  w.w1 = DenseMatrix(1, 2, {1.0, 1.0});
  w.w2 = DenseMatrix(2, 1, {1.0, 1.0});
  const DenseMatrix x(4, 1, {1, 2, 3, 4});
  const DenseMatrix y = oracle::per_expert_moe_oracle(x, w, c);
  CHECK(y(0, 0) != 0.0);
  CHECK(y(1, 0) != 0.0);
  CHECK(y(2, 0) == 0.0);
  CHECK(y(3, 0) == 0.0);
  CHECK(max_abs_diff(y, moe_dropping_forward(x, w, c).y) <= 1e-15);
}

// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>

#include "doctest.h"
#include "dmoe/instrumentation.hpp"
#include "dmoe/moe.hpp"
#include "dmoe/oracles.hpp"
#include "dmoe/parallel.hpp"
#include "dmoe/testing.hpp"

using namespace dmoe;

namespace {

MoEConfig small_config(std::size_t experts, std::size_t block_size, std::size_t ffn) {
  MoEConfig c;
  c.num_experts = experts;
  c.block_size = block_size;
  c.ffn_hidden_size = ffn;
  c.hidden_size = 3;
  return c;
}

std::vector<std::size_t> tokens_of(const PermutationPlan& p) {
  std::vector<std::size_t> out;
  for (const Slot& s : p.gather_order) out.push_back(s.token);
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  MoEConfig c;
  CHECK_NOTHROW(c.validate());
  c.ffn_hidden_size = 6;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = MoEConfig{};
  c.top_k = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = MoEConfig{};
  c.capacity_factor = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.capacity_factor = 1.25;
  CHECK_NOTHROW(c.validate());
  CHECK_FALSE(c.dropless());
}

TEST_CASE("model presets") {
  const MoEConfig xs = moe_preset("xs");
  CHECK(xs.hidden_size == 512);
  CHECK(xs.ffn_hidden_size == 2048);
  CHECK(xs.num_experts == 64);
  CHECK(xs.top_k == 1);
  CHECK(moe_preset("small").hidden_size == 768);
  CHECK(moe_preset("medium").hidden_size == 1024);
  CHECK(moe_preset("medium").ffn_hidden_size == 4096);
  CHECK_THROWS_AS(moe_preset("large"), ConfigError);
}

TEST_CASE("expert capacity") {
  CHECK(expert_capacity(512, 64, 1.0) == 8);
  CHECK(expert_capacity(1024, 64, 1.5) == 24);
  CHECK(expert_capacity(10, 3, 1.0) == 4);
  CHECK(expert_capacity(300, 3, 1.1) == 110);  // 110.00000000000001 in floating point
  CHECK(expert_capacity(1, 8, 1.0) == 1);
}

TEST_CASE("router picks highest probabilities and breaks ties towards the lower index") {
  const DenseMatrix x(2, 1, {1.0, 0.0});
  const DenseMatrix w(1, 3, {0.0, 2.0, 1.0});
  const RouterAssignment a = router_forward(x, w, 2);
  CHECK(a.expert(0, 0) == 1);
  CHECK(a.expert(0, 1) == 2);
  // Token 1 has all-equal logits.
  CHECK(a.expert(1, 0) == 0);
  CHECK(a.expert(1, 1) == 1);
  CHECK(a.gate(1, 0) == doctest::Approx(1.0 / 3.0));
  const RouterAssignment r = router_forward(x, w, 2, true);
  CHECK(r.gate(0, 0) + r.gate(0, 1) == doctest::Approx(1.0));
  CHECK_THROWS_AS(router_forward(x, w, 4), ConfigError);
}

TEST_CASE("permutation groups tokens by expert") {
  const std::vector<std::size_t> ids{1, 0, 0};
  const RouterAssignment a = fixed_assignment(ids, 1, 2);
  const PermutationPlan p = make_permutation(a, small_config(2, 1, 1), 3);
  CHECK(tokens_of(p) == std::vector<std::size_t>{1, 2, 0});
  CHECK(p.counts == std::vector<std::size_t>{2, 1});
  CHECK(p.row(0, 0) == 2);
  CHECK(p.dropped.empty());
}

TEST_CASE("padding rounds each group up to the block size") {
  const std::vector<std::size_t> ids{0, 1, 1, 1, 1, 1, 0};
  const PermutationPlan p = make_permutation(fixed_assignment(ids, 1, 3), small_config(3, 4, 4), 7);
  CHECK(p.counts == std::vector<std::size_t>{2, 5, 0});
  CHECK(p.padded_counts == std::vector<std::size_t>{4, 8, 0});
  CHECK(p.padded_offsets == std::vector<std::size_t>{0, 4, 12, 12});
  CHECK(p.total_padded_rows == 12);
  CHECK(p.row(6, 0) == 1);
  CHECK(p.row(1, 0) == 4);
}

TEST_CASE("moe topology for padded counts [4, 8, 0]") {
  std::vector<std::size_t> ids(12, 1);
  for (std::size_t t = 0; t < 4; ++t) ids[t] = 0;
  MoEConfig c = small_config(3, 4, 8);
  const PermutationPlan p = make_permutation(fixed_assignment(ids, 1, 3), c, 12);
  CHECK(p.padded_counts == std::vector<std::size_t>{4, 8, 0});
  const BlockTopology t = moe_topology(p, c);
  CHECK(t.nnz_blocks() == 6);
  CHECK(t.n_block_rows() == 3);
  CHECK(t.n_block_cols() == 6);
  std::vector<BlockCoord> coords;
  for (std::size_t k = 0; k < t.nnz_blocks(); ++k) coords.push_back(t.coord(k));
  CHECK(coords == std::vector<BlockCoord>{{0, 0}, {0, 1}, {1, 2}, {1, 3}, {2, 2}, {2, 3}});
}

TEST_CASE("capacity mode keeps the earliest tokens") {
  const std::vector<std::size_t> ids(8, 0);
  MoEConfig c = small_config(4, 1, 1);
  c.capacity_factor = 1.0;
  const RouterAssignment a = fixed_assignment(ids, 1, 4);
  const PermutationPlan p = make_permutation(a, c, 8);
  CHECK(p.capacity == std::optional<std::size_t>(2));
  CHECK(tokens_of(p) == std::vector<std::size_t>{0, 1});
  CHECK(p.dropped.size() == 6);
  CHECK(p.drop_fraction() == 0.75);
  CHECK(p.row(5, 0) == PermutationPlan::kDropped);
  const DropStats s = drop_stats(p, a);
  CHECK(s.overall == 0.75);
  CHECK(s.per_expert == std::vector<double>{0.75, 0.0, 0.0, 0.0});
}

TEST_CASE("dropless plans never drop and zero-count experts get no rows") {
  const std::vector<std::size_t> ids(8, 2);
  const PermutationPlan p = make_permutation(fixed_assignment(ids, 1, 4), small_config(4, 4, 4), 8);
  CHECK(p.dropped.empty());
  CHECK(p.padded_counts == std::vector<std::size_t>{0, 0, 8, 0});
}

TEST_CASE("gather then unweighted scatter is the identity for top-1") {
  Rng rng(1);
  const std::vector<std::size_t> ids{2, 0, 2, 1, 0};
  const PermutationPlan p = make_permutation(fixed_assignment(ids, 1, 3), small_config(3, 2, 2), 5);
  const DenseMatrix x = rng.uniform_matrix(5, 3);
  const DenseMatrix g = padded_gather(x, p);
  CHECK(g.rows() == 6);
  CHECK(padded_scatter_unweighted(g, p) == x);
  // Padding rows are zero.
  CHECK(g(1, 0) == x(4, 0));
  CHECK(g.row(3)[0] == 0.0);
}

TEST_CASE("weighted scatter sums gate-weighted slots") {
  const std::vector<std::size_t> ids{0, 1};
  const RouterAssignment a = fixed_assignment(ids, 2, 2, 0.5);
  const PermutationPlan p = make_permutation(a, small_config(2, 1, 1), 1);
  const DenseMatrix y(2, 1, {2.0, 6.0});
  CHECK(padded_scatter(y, p, a) == DenseMatrix(1, 1, {4.0}));
}

TEST_CASE("single expert reduces to a dense MLP") {
  MoEConfig c;
  c.num_experts = 1;
  c.hidden_size = 3;
  c.ffn_hidden_size = 4;
  c.block_size = 2;
  c.activation = Activation::kGelu;
  Rng rng(6);
  const DenseMatrix x = rng.uniform_matrix(5, 3);
  const MoEWeights w = MoEWeights::random(c, 1);
  const DenseMatrix h = activation(Activation::kGelu, oracle::naive_matmul(x, w.w1), ActivationMode::kForward);
  const DenseMatrix mlp = oracle::naive_matmul(h, w.w2);
  CHECK(max_abs_diff(dmoe_forward(x, w, c).y, mlp) <= 1e-12);
}

TEST_CASE("dropless forward matches the per-expert oracle") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto skew = seed % 2 ? testing::RoutingSkew::kSkewed : testing::RoutingSkew::kUniform;
    const testing::MoECase c = testing::random_moe_case(seed, skew);
    CHECK(max_abs_diff(dmoe_forward(c.x, c.weights, c.config).y,
                       oracle::per_expert_moe_oracle(c.x, c.weights, c.config)) <= 1e-10);
  }
}

TEST_CASE("dropping forward matches the oracle under the same capacity") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    testing::MoECase c = testing::random_moe_case(seed, testing::RoutingSkew::kSkewed);
    c.config.capacity_factor = 1.0;
    const MoEDroppingForward f = moe_dropping_forward(c.x, c.weights, c.config);
    CHECK(max_abs_diff(f.y, oracle::per_expert_moe_oracle(c.x, c.weights, c.config)) <= 1e-10);
    CHECK(f.drop_stats.overall == f.cache.plan.drop_fraction());
  }
}

TEST_CASE("dmoe_forward ignores the capacity factor; dropping forward requires one") {
  testing::MoECase c = testing::random_moe_case(3, testing::RoutingSkew::kSkewed);
  const DenseMatrix ref = dmoe_forward(c.x, c.weights, c.config).y;
  CHECK_THROWS_AS(moe_dropping_forward(c.x, c.weights, c.config), ConfigError);
  c.config.capacity_factor = 0.5;
  const MoEForward f = dmoe_forward(c.x, c.weights, c.config);
  CHECK(f.y == ref);
  CHECK(f.cache.plan.dropped.empty());
}

TEST_CASE("shape checks on weights and inputs") {
  MoEConfig c;
  const MoEWeights w = MoEWeights::zeros(c);
  CHECK_THROWS_AS(dmoe_forward(DenseMatrix(2, c.hidden_size + 1), w, c), ShapeError);
  MoEWeights bad = w;
  bad.w2 = DenseMatrix(1, 1);
  CHECK_THROWS_AS(bad.check(c), ShapeError);
}

TEST_CASE("layer flops track padded rows exactly") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const testing::MoECase c = testing::random_moe_case(seed, testing::RoutingSkew::kSkewed);
    const auto before = CounterSnapshot::take();
    const MoEForward f = dmoe_forward(c.x, c.weights, c.config);
    const std::uint64_t flops = (CounterSnapshot::take() - before).sparse_flops;
    const auto& pc = f.cache.plan.padded_counts;
    const std::size_t rows = std::accumulate(pc.begin(), pc.end(), std::size_t{0});
    CHECK(flops == 4ull * rows * c.config.ffn_hidden_size * c.config.hidden_size);
  }
}

TEST_CASE("forward and backward are independent of the worker count") {
  const testing::MoECase c = testing::random_moe_case(7, testing::RoutingSkew::kUniform);
  MoEForward ref_f = dmoe_forward(c.x, c.weights, c.config);
  const MoEBackward ref_b = dmoe_backward(ref_f.y, ref_f.cache, c.weights);
  for (std::size_t workers : {2, 8}) {
    ScopedWorkers w(workers);
    const MoEForward f = dmoe_forward(c.x, c.weights, c.config);
    const MoEBackward b = dmoe_backward(f.y, f.cache, c.weights);
    CHECK(f.y == ref_f.y);
    CHECK(b.dx == ref_b.dx);
    CHECK(b.grads.w1 == ref_b.grads.w1);
    CHECK(b.grads.w2 == ref_b.grads.w2);
    CHECK(b.grads.router_w == ref_b.grads.router_w);
  }
}

TEST_CASE("load-balancing loss") {
  MoEConfig c = small_config(4, 1, 1);
  c.aux_loss_coefficient = 0.01;
  // Perfect balance: f_e = P_e = 1/E gives exactly the coefficient.
  const std::vector<std::size_t> ids{0, 1, 2, 3};
  RouterAssignment a = fixed_assignment(ids, 1, 4);
  a.probs = DenseMatrix(4, 4, 0.25);
  CHECK(load_balance_loss(a, c).loss == doctest::Approx(0.01));
  // Full collapse onto expert 0: f_0 = P_0 = 1 gives coefficient * E.
  const std::vector<std::size_t> zeros(4, 0);
  const RouterAssignment z = fixed_assignment(zeros, 1, 4);
  CHECK(load_balance_loss(z, c).loss == doctest::Approx(0.04));
  const AuxLoss aux = load_balance_loss(z, c);
  CHECK(aux.dprobs(2, 0) == doctest::Approx(0.01 * 4 * 1.0 / 4));
  CHECK(aux.dprobs(2, 1) == 0.0);
}

TEST_CASE("backward matches finite differences on small configs") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    for (Activation act : {Activation::kIdentity, Activation::kGelu}) {
      const testing::GradientCheck g = testing::check_gradients(testing::gradient_case(seed, act));
      INFO("seed " << seed);
      CHECK(g.dx <= 1e-5);
      CHECK(g.router_w <= 1e-5);
      CHECK(g.w1 <= 1e-5);
      CHECK(g.w2 <= 1e-5);
    }
  }
}

TEST_CASE("dropped tokens receive no expert gradient") {
  testing::MoECase c = testing::random_moe_case(2, testing::RoutingSkew::kSkewed);
  c.config.capacity_factor = 0.25;
  c.config.top_k = 1;
  c.config.activation = Activation::kIdentity;
  const MoEDroppingForward f = moe_dropping_forward(c.x, c.weights, c.config);
  const MoEBackward b = dmoe_backward(DenseMatrix(f.y.rows(), f.y.cols(), 1.0), f.cache, c.weights);
  for (const Slot& s : f.cache.plan.dropped) {
    CHECK(f.y.row(s.token)[0] == 0.0);
    for (double v : b.dx.row(s.token)) CHECK(v == 0.0);
  }
}

// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include "doctest.h"
#include "dmoe/trainer.hpp"

using namespace dmoe;

TEST_CASE("task config validation") {
  SynthTaskConfig c;
  CHECK_NOTHROW(c.validate());
  c.num_clusters = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SynthTaskConfig{};
  c.skew = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("noise-free uniform batches are exact centroids in round-robin order") {
  SynthTaskConfig c;
  c.noise_std = 0.0;
  c.tokens_per_batch = 40;
  const SynthBatch b = synth_batch(c, 0);
  std::vector<std::size_t> count(c.num_clusters, 0);
  for (std::size_t t = 0; t < b.clusters.size(); ++t) {
    CHECK(b.clusters[t] == t % c.num_clusters);
    ++count[b.clusters[t]];
  }
  for (std::size_t n : count) CHECK(n == 10);
  // Same cluster, same row.
  for (std::size_t t = c.num_clusters; t < b.clusters.size(); ++t) {
    for (std::size_t j = 0; j < c.hidden_size; ++j) {
      CHECK(b.x(t, j) == b.x(t - c.num_clusters, j));
      CHECK(b.target(t, j) == b.target(t - c.num_clusters, j));
    }
  }
}

TEST_CASE("batches are bitwise deterministic per (seed, step)") {
  SynthTaskConfig c;
  c.skew = 1.0;
  const SynthBatch a = synth_batch(c, 3), b = synth_batch(c, 3);
  CHECK(a.x == b.x);
  CHECK(a.target == b.target);
  CHECK(a.clusters == b.clusters);
  CHECK_FALSE(synth_batch(c, 4).x == a.x);
}

TEST_CASE("Zipf skew 2 over 4 clusters puts about 70% on cluster 0") {
  SynthTaskConfig c;
  c.skew = 2.0;
  c.tokens_per_batch = 1000;
  const std::vector<double> f = cluster_frequencies(c);
  const double norm = 1.0 + 1.0 / 4 + 1.0 / 9 + 1.0 / 16;
  CHECK(f[0] == doctest::Approx(1.0 / norm));
  const SynthBatch b = synth_batch(c, 0);
  std::size_t zero = 0;
  for (std::size_t k : b.clusters) zero += k == 0;
  CHECK(std::abs(static_cast<double>(zero) / 1000.0 - 0.70) <= 0.05);
}

TEST_CASE("Adam with zero gradients leaves parameters unchanged") {
  DenseMatrix p(2, 2, {1, 2, 3, 4});
  const DenseMatrix g(2, 2);
  AdamState s;
  DenseMatrix* params[] = {&p};
  const DenseMatrix* grads[] = {&g};
  adam_step(params, grads, s, AdamOptions{});
  CHECK(p == DenseMatrix(2, 2, {1, 2, 3, 4}));
  CHECK(s.step == 1);
}

TEST_CASE("one Adam step with unit gradient moves by the learning rate") {
  DenseMatrix p(1, 1, {0.0});
  const DenseMatrix g(1, 1, {1.0});
  AdamState s;
  DenseMatrix* params[] = {&p};
  const DenseMatrix* grads[] = {&g};
  AdamOptions opt;
  opt.lr = 0.1;
  adam_step(params, grads, s, opt);
  CHECK(p(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("Adam rejects mismatched shapes") {
  DenseMatrix p(1, 2);
  const DenseMatrix g(2, 1);
  AdamState s;
  DenseMatrix* params[] = {&p};
  const DenseMatrix* grads[] = {&g};
  CHECK_THROWS_AS(adam_step(params, grads, s, AdamOptions{}), ShapeError);
}

TEST_CASE("Adam runs are bitwise reproducible") {
  auto run = [] {
    DenseMatrix p(1, 3, {0.5, -1.0, 2.0});
    AdamState s;
    for (int i = 0; i < 10; ++i) {
      const DenseMatrix g = scale(p, 2.0);
      DenseMatrix* params[] = {&p};
      const DenseMatrix* grads[] = {&g};
      adam_step(params, grads, s, AdamOptions{});
    }
    return p;
  };
  CHECK(run() == run());
}

TEST_CASE("zero steps give an empty series") {
  TrainOptions o;
  o.steps = 0;
  CHECK(train_loop(MoEConfig{}, SynthTaskConfig{}, o, TrainMode::dropless()).empty());
}

TEST_CASE("dropless training drops nothing and lowers the loss") {
  TrainOptions o;
  o.steps = 60;
  const auto m = train_loop(MoEConfig{}, SynthTaskConfig{}, o, TrainMode::dropless());
  REQUIRE(m.size() == 60);
  for (const auto& s : m) {
    CHECK(s.drop_fraction == 0.0);
    std::size_t total = 0;
    for (std::size_t n : s.expert_counts) total += n;
    CHECK(total == 256);
  }
  CHECK(m.back().loss < m.front().loss);
}

TEST_CASE("capacity 1 under Zipf skew drops tokens early") {
  SynthTaskConfig task;
  task.skew = 2.0;
  TrainOptions o;
  o.steps = 10;
  const auto m = train_loop(MoEConfig{}, task, o, TrainMode::capacity(1.0));
  double dropped = 0.0;
  for (const auto& s : m) dropped += s.drop_fraction;
  CHECK(dropped > 0.0);
  CHECK(m.front().max_expert_load <= 64);  // capacity = 256 / 4
}

TEST_CASE("training is bitwise reproducible") {
  TrainOptions o;
  o.steps = 20;
  SynthTaskConfig task;
  task.skew = 1.0;
  const auto a = train_loop(MoEConfig{}, task, o, TrainMode::capacity(1.5));
  const auto b = train_loop(MoEConfig{}, task, o, TrainMode::capacity(1.5));
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].loss == b[i].loss);
    CHECK(a[i].aux_loss == b[i].aux_loss);
    CHECK(a[i].expert_counts == b[i].expert_counts);
  }
}

TEST_CASE("divergence names the step") {
  TrainOptions o;
  o.steps = 50;
  o.adam.lr = 1e300;
  try {
    (void)train_loop(MoEConfig{}, SynthTaskConfig{}, o, TrainMode::dropless());
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find(std::to_string(e.step())) != std::string::npos);
  }
}

TEST_CASE("task and model widths must agree") {
  SynthTaskConfig task;
  task.hidden_size = 8;
  CHECK_THROWS_AS(train_loop(MoEConfig{}, task, TrainOptions{}, TrainMode::dropless()), ConfigError);
}

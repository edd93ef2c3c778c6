// SPDX-License-Identifier: Apache-2.0
//
// Toy end-to-end training: a single MoE layer regressing a clustered
// synthetic task where each cluster has its own linear target map, so
// routing each cluster to its own expert is the optimal solution.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "dmoe/dense.hpp"
#include "dmoe/moe.hpp"

namespace dmoe {

struct SynthTaskConfig {
  std::size_t num_clusters = 4;
  std::size_t tokens_per_batch = 256;
  std::size_t hidden_size = 16;
  double noise_std = 0.1;
  double skew = 0.0;  // Zipf exponent; 0 means equal cluster frequencies
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthBatch {
  DenseMatrix x;
  DenseMatrix target;
  std::vector<std::size_t> clusters;  // source cluster of every token
};

// Cluster probabilities proportional to (c + 1)^-skew.
std::vector<double> cluster_frequencies(const SynthTaskConfig& cfg);

// Deterministic in (cfg.seed, step). With skew == 0 clusters are assigned
// round-robin; otherwise they are sampled from cluster_frequencies.
SynthBatch synth_batch(const SynthTaskConfig& cfg, std::size_t step);

struct AdamOptions {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<DenseMatrix> m;
  std::vector<DenseMatrix> v;
  std::uint64_t step = 0;
};

// One bias-corrected Adam update, in place. State is lazily sized on first use.
void adam_step(std::span<DenseMatrix* const> params, std::span<const DenseMatrix* const> grads, AdamState& state,
               const AdamOptions& opt);

struct TrainMode {
  std::optional<double> capacity_factor;  // empty: dropless

  static TrainMode dropless() { return {}; }
  static TrainMode capacity(double cf) { return {cf}; }
  bool is_dropless() const { return !capacity_factor.has_value(); }
};

struct TrainOptions {
  std::size_t steps = 300;
  AdamOptions adam;
  std::uint64_t init_seed = 1;
  double router_init_std = 0.5;
};

struct StepMetrics {
  std::size_t step = 0;
  double loss = 0.0;  // mean squared error before the update
  double aux_loss = 0.0;
  std::vector<std::size_t> expert_counts;
  double drop_fraction = 0.0;
  std::size_t max_expert_load = 0;
};

class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(std::size_t step);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Throws ConfigError on inconsistent configs and DivergenceError when the
// objective becomes non-finite.
std::vector<StepMetrics> train_loop(const MoEConfig& model, const SynthTaskConfig& task, const TrainOptions& options,
                                    const TrainMode& mode);

}  // namespace dmoe

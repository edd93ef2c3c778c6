// SPDX-License-Identifier: Apache-2.0

#include "dmoe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dmoe/rng.hpp"

namespace dmoe {

void SynthTaskConfig::validate() const {
  if (num_clusters == 0) throw ConfigError("SynthTaskConfig: num_clusters must be at least 1");
  if (hidden_size == 0) throw ConfigError("SynthTaskConfig: hidden_size must be positive");
  if (!(noise_std >= 0.0)) throw ConfigError("SynthTaskConfig: noise_std must be nonnegative");
  if (!(skew >= 0.0)) throw ConfigError("SynthTaskConfig: skew must be nonnegative");
}

std::vector<double> cluster_frequencies(const SynthTaskConfig& cfg) {
  std::vector<double> f(cfg.num_clusters);
  double z = 0.0;
  for (std::size_t c = 0; c < f.size(); ++c) {
    f[c] = std::pow(static_cast<double>(c + 1), -cfg.skew);
    z += f[c];
  }
  for (double& v : f) v /= z;
  return f;
}

SynthBatch synth_batch(const SynthTaskConfig& cfg, std::size_t step) {
  cfg.validate();
  const std::size_t hidden = cfg.hidden_size;

  // Task structure depends only on the seed.
  Rng task_rng(derive_seed(cfg.seed, 0));
  std::vector<DenseMatrix> centroids;
  std::vector<DenseMatrix> maps;
  for (std::size_t c = 0; c < cfg.num_clusters; ++c) {
    centroids.push_back(task_rng.normal_matrix(1, hidden, 1.0));
    maps.push_back(task_rng.normal_matrix(hidden, hidden, 1.0 / std::sqrt(static_cast<double>(hidden))));
  }

  const std::vector<double> freq = cluster_frequencies(cfg);
  std::vector<double> cdf(freq.size());
  std::partial_sum(freq.begin(), freq.end(), cdf.begin());

  Rng rng(derive_seed(cfg.seed, step + 1));
  SynthBatch batch{DenseMatrix(cfg.tokens_per_batch, hidden), DenseMatrix(cfg.tokens_per_batch, hidden), {}};
  batch.clusters.resize(cfg.tokens_per_batch);
  for (std::size_t t = 0; t < cfg.tokens_per_batch; ++t) {
    std::size_t c = t % cfg.num_clusters;
    if (cfg.skew != 0.0) {
      const double u = rng.uniform();
      c = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      c = std::min(c, cfg.num_clusters - 1);
    }
    batch.clusters[t] = c;
    auto xr = batch.x.row(t);
    for (std::size_t i = 0; i < hidden; ++i) {
      xr[i] = centroids[c](0, i) + (cfg.noise_std > 0.0 ? cfg.noise_std * rng.normal() : 0.0);
    }
    auto tr = batch.target.row(t);
    for (std::size_t i = 0; i < hidden; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < hidden; ++j) acc += maps[c](i, j) * xr[j];
      tr[i] = acc;
    }
  }
  return batch;
}

void adam_step(std::span<DenseMatrix* const> params, std::span<const DenseMatrix* const> grads, AdamState& state,
               const AdamOptions& opt) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: params and grads differ in count");
  if (state.m.empty()) {
    for (const DenseMatrix* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state was built for different params");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const DenseMatrix& g = *grads[i];
    if (g.rows() != params[i]->rows() || g.cols() != params[i]->cols() || state.m[i].rows() != g.rows() ||
        state.m[i].cols() != g.cols()) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i) + " (" +
                       params[i]->shape_string() + " vs grad " + g.shape_string() + ")");
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
      v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      p[j] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.epsilon);
    }
  }
}

DivergenceError::DivergenceError(std::size_t step)
    : std::runtime_error("training diverged at step " + std::to_string(step)), step_(step) {}

std::vector<StepMetrics> train_loop(const MoEConfig& model, const SynthTaskConfig& task, const TrainOptions& options,
                                    const TrainMode& mode) {
  MoEConfig config = model;
  config.capacity_factor = mode.capacity_factor;
  config.validate();
  task.validate();
  if (task.hidden_size != config.hidden_size) {
    throw ConfigError("train_loop: task hidden_size " + std::to_string(task.hidden_size) +
                      " differs from model hidden_size " + std::to_string(config.hidden_size));
  }

  MoEWeights w = MoEWeights::random(config, options.init_seed, options.router_init_std);
  AdamState adam;
  std::vector<StepMetrics> metrics;
  metrics.reserve(options.steps);
  const double norm = static_cast<double>(task.tokens_per_batch * task.hidden_size);

  for (std::size_t step = 0; step < options.steps; ++step) {
    const SynthBatch batch = synth_batch(task, step);
    MoEForward fwd = mode.is_dropless() ? dmoe_forward(batch.x, w, config) : [&] {
      MoEDroppingForward d = moe_dropping_forward(batch.x, w, config);
      return MoEForward{std::move(d.y), std::move(d.cache)};
    }();

    DenseMatrix diff = subtract(fwd.y, batch.target);
    const double mse = sum_squares(diff) / norm;
    const AuxLoss aux = load_balance_loss(fwd.cache.assignment, config);
    if (!std::isfinite(mse) || !std::isfinite(aux.loss)) throw DivergenceError(step);

    const PermutationPlan& plan = fwd.cache.plan;
    StepMetrics sm;
    sm.step = step;
    sm.loss = mse;
    sm.aux_loss = aux.loss;
    sm.expert_counts = plan.counts;
    sm.drop_fraction = plan.drop_fraction();
    sm.max_expert_load = plan.counts.empty() ? 0 : *std::max_element(plan.counts.begin(), plan.counts.end());
    metrics.push_back(std::move(sm));

    const MoEBackward bwd = dmoe_backward(scale(diff, 2.0 / norm), fwd.cache, w, aux.dprobs);
    DenseMatrix* params[] = {&w.router_w, &w.w1, &w.w2};
    const DenseMatrix* grads[] = {&bwd.grads.router_w, &bwd.grads.w1, &bwd.grads.w2};
    adam_step(params, grads, adam, options.adam);
  }
  return metrics;
}

}  // namespace dmoe

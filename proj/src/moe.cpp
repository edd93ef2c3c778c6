// SPDX-License-Identifier: Apache-2.0

#include "dmoe/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dmoe/rng.hpp"
#include "dmoe/sparse_kernels.hpp"

namespace dmoe {

void MoEConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("MoEConfig: " + what); };
  if (hidden_size == 0) fail("hidden_size must be positive");
  if (ffn_hidden_size == 0) fail("ffn_hidden_size must be positive");
  if (num_experts == 0) fail("num_experts must be positive");
  if (block_size == 0) fail("block_size must be positive");
  if (top_k == 0 || top_k > num_experts) {
    fail("top_k=" + std::to_string(top_k) + " must be in [1, num_experts=" + std::to_string(num_experts) + "]");
  }
  if (ffn_hidden_size % block_size != 0) {
    fail("ffn_hidden_size=" + std::to_string(ffn_hidden_size) + " is not divisible by block_size=" +
         std::to_string(block_size));
  }
  if (capacity_factor && !(*capacity_factor > 0.0 && std::isfinite(*capacity_factor))) {
    fail("capacity_factor must be a positive finite number");
  }
  if (!(aux_loss_coefficient >= 0.0)) fail("aux_loss_coefficient must be nonnegative");
}

MoEConfig moe_preset(std::string_view name) {
  MoEConfig c;
  if (name == "xs") {
    c.hidden_size = 512;
  } else if (name == "small") {
    c.hidden_size = 768;
  } else if (name == "medium") {
    c.hidden_size = 1024;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected xs, small or medium)");
  }
  c.ffn_hidden_size = 4 * c.hidden_size;
  c.num_experts = 64;
  c.top_k = 1;
  c.block_size = 128;
  return c;
}

// ---------------------------------------------------------------------------
// Routing

RouterAssignment router_forward(const DenseMatrix& x, const DenseMatrix& router_w, std::size_t top_k,
                                bool renormalize_gates) {
  const std::size_t num_experts = router_w.cols();
  if (top_k == 0 || top_k > num_experts) {
    throw ConfigError("router_forward: top_k=" + std::to_string(top_k) + " with " +
                      std::to_string(num_experts) + " experts");
  }
  RouterAssignment a;
  a.num_tokens = x.rows();
  a.top_k = top_k;
  a.probs = softmax_rows(matmul(x, router_w));
  a.expert_ids.resize(a.num_tokens * top_k);
  a.gates.resize(a.num_tokens * top_k);

  std::vector<std::size_t> order(num_experts);
  for (std::size_t t = 0; t < a.num_tokens; ++t) {
    auto p = a.probs.row(t);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + top_k, order.end(), [&](std::size_t i, std::size_t j) {
      return p[i] > p[j] || (p[i] == p[j] && i < j);
    });
    double selected = 0.0;
    for (std::size_t s = 0; s < top_k; ++s) selected += p[order[s]];
    for (std::size_t s = 0; s < top_k; ++s) {
      a.expert_ids[t * top_k + s] = order[s];
      a.gates[t * top_k + s] = renormalize_gates ? p[order[s]] / selected : p[order[s]];
    }
  }
  return a;
}

RouterAssignment fixed_assignment(std::span<const std::size_t> expert_ids, std::size_t top_k,
                                  std::size_t num_experts, double gate) {
  if (top_k == 0 || expert_ids.size() % top_k != 0) {
    throw ConfigError("fixed_assignment: expert list length is not a multiple of top_k");
  }
  RouterAssignment a;
  a.num_tokens = expert_ids.size() / top_k;
  a.top_k = top_k;
  a.expert_ids.assign(expert_ids.begin(), expert_ids.end());
  a.gates.assign(expert_ids.size(), gate);
  a.probs = DenseMatrix(a.num_tokens, num_experts);
  for (std::size_t t = 0; t < a.num_tokens; ++t) {
    for (std::size_t s = 0; s < top_k; ++s) {
      const std::size_t e = a.expert(t, s);
      if (e >= num_experts) throw ConfigError("fixed_assignment: expert id out of range");
      a.probs(t, e) = gate;
    }
  }
  return a;
}

std::size_t expert_capacity(std::size_t num_tokens, std::size_t num_experts, double capacity_factor) {
  const double expected = static_cast<double>(num_tokens) * capacity_factor / static_cast<double>(num_experts);
  const double nearest = std::round(expected);
  if (std::abs(expected - nearest) <= 1e-9 * std::max(1.0, nearest)) return static_cast<std::size_t>(nearest);
  return static_cast<std::size_t>(std::ceil(expected));
}

// ---------------------------------------------------------------------------
// Permutation

double PermutationPlan::drop_fraction() const {
  const std::size_t total = num_tokens * top_k;
  return total == 0 ? 0.0 : static_cast<double>(dropped.size()) / static_cast<double>(total);
}

PermutationPlan make_permutation(const RouterAssignment& assignment, const MoEConfig& config,
                                 std::size_t num_tokens) {
  if (assignment.num_tokens != num_tokens) {
    throw ShapeError("make_permutation: assignment covers " + std::to_string(assignment.num_tokens) +
                     " tokens, expected " + std::to_string(num_tokens));
  }
  const std::size_t num_experts = config.num_experts;
  const std::size_t top_k = assignment.top_k;
  const std::size_t bs = config.block_size;

  PermutationPlan plan;
  plan.num_tokens = num_tokens;
  plan.top_k = top_k;
  plan.block_size = bs;
  if (config.capacity_factor) {
    // Every (token, slot) pair is one assignment, so the uniform expectation
    // per expert is num_tokens * top_k / num_experts.
    plan.capacity = expert_capacity(num_tokens * top_k, num_experts, *config.capacity_factor);
  }

  // Bucket pairs by expert, ascending token order within each bucket.
  std::vector<std::vector<Slot>> buckets(num_experts);
  for (std::size_t t = 0; t < num_tokens; ++t) {
    for (std::size_t s = 0; s < top_k; ++s) {
      const std::size_t e = assignment.expert(t, s);
      if (e >= num_experts) throw ShapeError("make_permutation: expert id " + std::to_string(e) + " out of range");
      buckets[e].push_back({t, s});
    }
  }

  plan.counts.assign(num_experts, 0);
  plan.padded_counts.assign(num_experts, 0);
  plan.padded_offsets.assign(num_experts + 1, 0);
  plan.row_of.assign(num_tokens * top_k, PermutationPlan::kDropped);
  for (std::size_t e = 0; e < num_experts; ++e) {
    const auto& bucket = buckets[e];
    const std::size_t keep = plan.capacity ? std::min(*plan.capacity, bucket.size()) : bucket.size();
    plan.counts[e] = keep;
    plan.padded_counts[e] = (keep + bs - 1) / bs * bs;
    plan.padded_offsets[e + 1] = plan.padded_offsets[e] + plan.padded_counts[e];
    for (std::size_t i = 0; i < bucket.size(); ++i) {
      if (i < keep) {
        const std::size_t row = plan.padded_offsets[e] + i;
        plan.gather_order.push_back(bucket[i]);
        plan.gather_rows.push_back(row);
        plan.row_of[bucket[i].token * top_k + bucket[i].slot] = row;
      } else {
        plan.dropped.push_back(bucket[i]);
      }
    }
  }
  plan.total_padded_rows = plan.padded_offsets.back();
  return plan;
}

DenseMatrix padded_gather(const DenseMatrix& x, const PermutationPlan& plan) {
  if (x.rows() != plan.num_tokens) {
    throw ShapeError("padded_gather: x has " + std::to_string(x.rows()) + " rows, plan expects " +
                     std::to_string(plan.num_tokens));
  }
  DenseMatrix out(plan.total_padded_rows, x.cols());
  for (std::size_t j = 0; j < plan.gather_order.size(); ++j) {
    auto src = x.row(plan.gather_order[j].token);
    std::copy(src.begin(), src.end(), out.row(plan.gather_rows[j]).begin());
  }
  return out;
}

DenseMatrix padded_scatter(const DenseMatrix& y, const PermutationPlan& plan,
                           const RouterAssignment& assignment) {
  if (y.rows() != plan.total_padded_rows) {
    throw ShapeError("padded_scatter: y has " + std::to_string(y.rows()) + " rows, plan has " +
                     std::to_string(plan.total_padded_rows));
  }
  DenseMatrix out(plan.num_tokens, y.cols());
  for (std::size_t t = 0; t < plan.num_tokens; ++t) {
    auto dst = out.row(t);
    for (std::size_t s = 0; s < plan.top_k; ++s) {
      const std::size_t row = plan.row(t, s);
      if (row == PermutationPlan::kDropped) continue;
      const double g = assignment.gate(t, s);
      auto src = y.row(row);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += g * src[c];
    }
  }
  return out;
}

DenseMatrix padded_scatter_unweighted(const DenseMatrix& y, const PermutationPlan& plan) {
  if (y.rows() != plan.total_padded_rows) {
    throw ShapeError("padded_scatter_unweighted: row count mismatch");
  }
  DenseMatrix out(plan.num_tokens, y.cols());
  for (std::size_t t = 0; t < plan.num_tokens; ++t) {
    auto dst = out.row(t);
    for (std::size_t s = 0; s < plan.top_k; ++s) {
      const std::size_t row = plan.row(t, s);
      if (row == PermutationPlan::kDropped) continue;
      auto src = y.row(row);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
  }
  return out;
}

BlockTopology moe_topology(const PermutationPlan& plan, const MoEConfig& config) {
  config.validate();
  if (plan.block_size != config.block_size || plan.num_experts() != config.num_experts) {
    throw ConfigError("moe_topology: plan was built for a different configuration");
  }
  const std::size_t bs = config.block_size;
  const std::size_t f = config.ffn_blocks();
  const std::size_t n_block_rows = plan.total_padded_rows / bs;
  const std::size_t n_block_cols = config.num_experts * f;

  // Expert rectangles are laid out in row-major order already, so the CSR
  // arrays can be written directly.
  std::vector<std::size_t> row_offsets(n_block_rows + 1, 0);
  std::vector<std::size_t> col_indices;
  std::size_t block_row = 0;
  for (std::size_t e = 0; e < config.num_experts; ++e) {
    for (std::size_t r = 0; r < plan.padded_counts[e] / bs; ++r, ++block_row) {
      for (std::size_t c = 0; c < f; ++c) col_indices.push_back(e * f + c);
      row_offsets[block_row + 1] = col_indices.size();
    }
  }
  return BlockTopology::from_csr(bs, n_block_rows, n_block_cols, std::move(row_offsets), std::move(col_indices));
}

// ---------------------------------------------------------------------------
// Weights

MoEWeights MoEWeights::zeros(const MoEConfig& config) {
  return {DenseMatrix(config.hidden_size, config.num_experts),
          DenseMatrix(config.hidden_size, config.inner_dim()),
          DenseMatrix(config.inner_dim(), config.hidden_size)};
}

MoEWeights MoEWeights::random(const MoEConfig& config, std::uint64_t seed, double router_std) {
  Rng rng(seed);
  MoEWeights w;
  w.router_w = rng.normal_matrix(config.hidden_size, config.num_experts, router_std);
  w.w1 = rng.normal_matrix(config.hidden_size, config.inner_dim(),
                           1.0 / std::sqrt(static_cast<double>(config.hidden_size)));
  w.w2 = rng.normal_matrix(config.inner_dim(), config.hidden_size,
                           1.0 / std::sqrt(static_cast<double>(config.ffn_hidden_size)));
  return w;
}

void MoEWeights::check(const MoEConfig& config) const {
  auto expect = [](const DenseMatrix& m, std::size_t r, std::size_t c, const char* name) {
    if (m.rows() != r || m.cols() != c) {
      throw ShapeError(std::string("MoEWeights: ") + name + " is " + m.shape_string() + ", expected " +
                       std::to_string(r) + "x" + std::to_string(c));
    }
  };
  expect(router_w, config.hidden_size, config.num_experts, "router_w");
  expect(w1, config.hidden_size, config.inner_dim(), "w1");
  expect(w2, config.inner_dim(), config.hidden_size, "w2");
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

MoEForward forward_with_config(const DenseMatrix& x, const MoEWeights& w, const MoEConfig& config) {
  config.validate();
  w.check(config);
  if (x.cols() != config.hidden_size) {
    throw ShapeError("moe forward: x is " + x.shape_string() + " but hidden_size is " +
                     std::to_string(config.hidden_size));
  }
  RouterAssignment assignment = router_forward(x, w.router_w, config.top_k, config.renormalize_gates);
  PermutationPlan plan = make_permutation(assignment, config, x.rows());
  TopologyPtr topology = share(moe_topology(plan, config));

  DenseMatrix x_gathered = padded_gather(x, plan);
  BlockSparseMatrix h_pre = sdd(x_gathered, w.w1, topology);
  BlockSparseMatrix h_post = sparse_map(h_pre, config.activation, ActivationMode::kForward);
  DenseMatrix y_gathered = dsd(h_post, w.w2);
  DenseMatrix y = padded_scatter(y_gathered, plan, assignment);

  return {std::move(y),
          MoECache{config, std::move(assignment), std::move(plan), std::move(topology), x,
                   std::move(x_gathered), std::move(h_pre), std::move(h_post), std::move(y_gathered)}};
}

}  // namespace

MoEForward dmoe_forward(const DenseMatrix& x, const MoEWeights& w, const MoEConfig& config) {
  MoEConfig dropless = config;
  dropless.capacity_factor.reset();
  return forward_with_config(x, w, dropless);
}

DropStats drop_stats(const PermutationPlan& plan, const RouterAssignment& assignment) {
  const std::size_t num_experts = plan.num_experts();
  std::vector<std::size_t> assigned(num_experts, 0);
  std::vector<std::size_t> dropped(num_experts, 0);
  for (std::size_t t = 0; t < plan.num_tokens; ++t) {
    for (std::size_t s = 0; s < plan.top_k; ++s) ++assigned[assignment.expert(t, s)];
  }
  for (const auto& d : plan.dropped) ++dropped[assignment.expert(d.token, d.slot)];

  DropStats stats;
  stats.per_expert.resize(num_experts, 0.0);
  for (std::size_t e = 0; e < num_experts; ++e) {
    if (assigned[e] > 0) stats.per_expert[e] = static_cast<double>(dropped[e]) / static_cast<double>(assigned[e]);
  }
  stats.dropped = plan.dropped.size();
  stats.assignments = plan.num_tokens * plan.top_k;
  stats.overall = plan.drop_fraction();
  return stats;
}

MoEDroppingForward moe_dropping_forward(const DenseMatrix& x, const MoEWeights& w, const MoEConfig& config) {
  if (!config.capacity_factor) {
    throw ConfigError("moe_dropping_forward: capacity_factor must be finite");
  }
  MoEForward fwd = forward_with_config(x, w, config);
  DropStats stats = drop_stats(fwd.cache.plan, fwd.cache.assignment);
  return {std::move(fwd.y), std::move(fwd.cache), std::move(stats)};
}

MoEBackward dmoe_backward(const DenseMatrix& dy, const MoECache& cache, const MoEWeights& w) {
  return dmoe_backward(dy, cache, w, DenseMatrix(cache.assignment.num_tokens, cache.config.num_experts));
}

MoEBackward dmoe_backward(const DenseMatrix& dy, const MoECache& cache, const MoEWeights& w,
                          const DenseMatrix& extra_dprobs) {
  const MoEConfig& config = cache.config;
  const RouterAssignment& assignment = cache.assignment;
  const PermutationPlan& plan = cache.plan;
  const std::size_t num_tokens = plan.num_tokens;
  const std::size_t top_k = plan.top_k;
  const std::size_t hidden = config.hidden_size;

  w.check(config);
  if (dy.rows() != num_tokens || dy.cols() != hidden) {
    throw ShapeError("dmoe_backward: dy is " + dy.shape_string() + ", forward output was " +
                     std::to_string(num_tokens) + "x" + std::to_string(hidden));
  }
  if (extra_dprobs.rows() != num_tokens || extra_dprobs.cols() != config.num_experts) {
    throw ShapeError("dmoe_backward: extra_dprobs is " + extra_dprobs.shape_string());
  }

  // Un-permutation backward: gate-weighted copies of dy into expert rows, and
  // the gate gradient <expert output, dy> per kept slot.
  DenseMatrix dy_gathered(plan.total_padded_rows, hidden);
  std::vector<double> dgate(num_tokens * top_k, 0.0);
  for (std::size_t t = 0; t < num_tokens; ++t) {
    auto g_out = dy.row(t);
    for (std::size_t s = 0; s < top_k; ++s) {
      const std::size_t row = plan.row(t, s);
      if (row == PermutationPlan::kDropped) continue;
      const double g = assignment.gate(t, s);
      auto dst = dy_gathered.row(row);
      auto y_row = cache.y_gathered.row(row);
      double dot = 0.0;
      for (std::size_t c = 0; c < hidden; ++c) {
        dst[c] = g * g_out[c];
        dot += y_row[c] * g_out[c];
      }
      dgate[t * top_k + s] = dot;
    }
  }

  MoEBackward out;
  // Second layer: data gradient (SDD^T) and weight gradient (DS^TD).
  BlockSparseMatrix dh_post = sdd(dy_gathered, w.w2, cache.topology, Transpose::kNo, Transpose::kYes);
  out.grads.w2 = dsd(cache.h_post, dy_gathered, Transpose::kYes, Transpose::kNo);

  BlockSparseMatrix dh_pre =
      sparse_hadamard(dh_post, sparse_map(cache.h_pre, config.activation, ActivationMode::kGrad));

  // First layer: data gradient (DSD^T) and weight gradient (DD^TS).
  DenseMatrix dx_gathered = dsd(dh_pre, w.w1, Transpose::kNo, Transpose::kYes);
  out.grads.w1 = dds(cache.x_gathered, dh_pre, Transpose::kYes, Transpose::kNo);

  out.dx = DenseMatrix(num_tokens, hidden);
  for (std::size_t t = 0; t < num_tokens; ++t) {
    auto dst = out.dx.row(t);
    for (std::size_t s = 0; s < top_k; ++s) {
      const std::size_t row = plan.row(t, s);
      if (row == PermutationPlan::kDropped) continue;
      auto src = dx_gathered.row(row);
      for (std::size_t c = 0; c < hidden; ++c) dst[c] += src[c];
    }
  }

  // Router: gates -> probs -> logits.
  const DenseMatrix& probs = assignment.probs;
  DenseMatrix dprobs = extra_dprobs;
  for (std::size_t t = 0; t < num_tokens; ++t) {
    if (config.renormalize_gates) {
      double selected = 0.0;
      double weighted = 0.0;
      for (std::size_t s = 0; s < top_k; ++s) {
        const double p = probs(t, assignment.expert(t, s));
        selected += p;
        weighted += dgate[t * top_k + s] * p;
      }
      for (std::size_t s = 0; s < top_k; ++s) {
        dprobs(t, assignment.expert(t, s)) += dgate[t * top_k + s] / selected - weighted / (selected * selected);
      }
    } else {
      for (std::size_t s = 0; s < top_k; ++s) dprobs(t, assignment.expert(t, s)) += dgate[t * top_k + s];
    }
  }
  DenseMatrix dlogits(num_tokens, config.num_experts);
  for (std::size_t t = 0; t < num_tokens; ++t) {
    auto p = probs.row(t);
    auto dp = dprobs.row(t);
    double dot = 0.0;
    for (std::size_t e = 0; e < p.size(); ++e) dot += p[e] * dp[e];
    auto dl = dlogits.row(t);
    for (std::size_t e = 0; e < p.size(); ++e) dl[e] = p[e] * (dp[e] - dot);
  }
  out.grads.router_w = matmul(cache.x, dlogits, Transpose::kYes, Transpose::kNo);
  out.dx = add(out.dx, matmul(dlogits, w.router_w, Transpose::kNo, Transpose::kYes));
  return out;
}

AuxLoss load_balance_loss(const RouterAssignment& assignment, const MoEConfig& config) {
  const std::size_t num_tokens = assignment.num_tokens;
  const std::size_t num_experts = config.num_experts;
  if (assignment.probs.rows() != num_tokens || assignment.probs.cols() != num_experts) {
    throw ShapeError("load_balance_loss: probs are " + assignment.probs.shape_string());
  }
  AuxLoss aux;
  aux.dprobs = DenseMatrix(num_tokens, num_experts);
  if (num_tokens == 0) return aux;

  const double inv_tokens = 1.0 / static_cast<double>(num_tokens);
  std::vector<double> fraction(num_experts, 0.0);
  std::vector<double> mean_prob(num_experts, 0.0);
  for (std::size_t t = 0; t < num_tokens; ++t) {
    fraction[assignment.expert(t, 0)] += inv_tokens;
    for (std::size_t e = 0; e < num_experts; ++e) mean_prob[e] += assignment.probs(t, e);
  }
  const double scale_factor = config.aux_loss_coefficient * static_cast<double>(num_experts);
  double total = 0.0;
  for (std::size_t e = 0; e < num_experts; ++e) total += fraction[e] * (mean_prob[e] * inv_tokens);
  aux.loss = scale_factor * total;
  for (std::size_t t = 0; t < num_tokens; ++t) {
    for (std::size_t e = 0; e < num_experts; ++e) aux.dprobs(t, e) = scale_factor * fraction[e] * inv_tokens;
  }
  return aux;
}

}  // namespace dmoe

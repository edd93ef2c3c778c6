// SPDX-License-Identifier: Apache-2.0

#include "dmoe/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dmoe::oracle {

namespace {

double at(const DenseMatrix& m, Transpose t, std::size_t r, std::size_t c) {
  return t == Transpose::kYes ? m(c, r) : m(r, c);
}

double gelu_tanh(double x) {
  const double c = std::sqrt(2.0 / std::acos(-1.0));
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * std::pow(x, 3))));
}

double apply_activation(Activation kind, double x) {
  switch (kind) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return std::max(0.0, x);
    case Activation::kGelu: return gelu_tanh(x);
  }
  return x;
}

}  // namespace

DenseMatrix naive_matmul(const DenseMatrix& a, const DenseMatrix& b, Transpose transpose_a, Transpose transpose_b) {
  const std::size_t m = eff_rows(a, transpose_a);
  const std::size_t k = eff_cols(a, transpose_a);
  const std::size_t n = eff_cols(b, transpose_b);
  if (k != eff_rows(b, transpose_b)) throw ShapeError("naive_matmul: inner dimensions disagree");
  DenseMatrix out(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += at(a, transpose_a, i, p) * at(b, transpose_b, p, j);
      out(i, j) = acc;
    }
  }
  return out;
}

DenseMatrix masked_matmul_oracle(const DenseMatrix& a, const DenseMatrix& b, const BlockTopology& topology,
                                 Transpose transpose_a, Transpose transpose_b) {
  DenseMatrix full = naive_matmul(a, b, transpose_a, transpose_b);
  if (full.rows() != topology.rows() || full.cols() != topology.cols()) {
    throw ShapeError("masked_matmul_oracle: product " + full.shape_string() + " does not match topology");
  }
  const std::size_t bs = topology.block_size();
  std::vector<bool> keep(topology.n_block_rows() * topology.n_block_cols(), false);
  for (std::size_t r = 0; r < topology.n_block_rows(); ++r) {
    for (std::size_t k = topology.row_offsets()[r]; k < topology.row_offsets()[r + 1]; ++k) {
      keep[r * topology.n_block_cols() + topology.col_indices()[k]] = true;
    }
  }
  for (std::size_t i = 0; i < full.rows(); ++i) {
    for (std::size_t j = 0; j < full.cols(); ++j) {
      if (!keep[(i / bs) * topology.n_block_cols() + j / bs]) full(i, j) = 0.0;
    }
  }
  return full;
}

std::vector<BlockCoord> explicit_transpose_coords(const BlockTopology& topology) {
  std::vector<BlockCoord> out;
  for (std::size_t r = 0; r < topology.n_block_rows(); ++r) {
    for (std::size_t k = topology.row_offsets()[r]; k < topology.row_offsets()[r + 1]; ++k) {
      out.push_back({topology.col_indices()[k], r});
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

DenseMatrix per_expert_moe_oracle(const DenseMatrix& x, const MoEWeights& w, const MoEConfig& config) {
  const std::size_t num_tokens = x.rows();
  const std::size_t hidden = config.hidden_size;
  const std::size_t num_experts = config.num_experts;
  const std::size_t ffn = config.ffn_hidden_size;
  const std::size_t top_k = config.top_k;

  // Routing, recomputed from scratch.
  DenseMatrix logits = naive_matmul(x, w.router_w);
  std::vector<std::vector<std::size_t>> chosen(num_tokens);
  std::vector<std::vector<double>> gates(num_tokens);
  for (std::size_t t = 0; t < num_tokens; ++t) {
    double mx = logits(t, 0);
    for (std::size_t e = 1; e < num_experts; ++e) mx = std::max(mx, logits(t, e));
    std::vector<double> p(num_experts);
    double z = 0.0;
    for (std::size_t e = 0; e < num_experts; ++e) {
      p[e] = std::exp(logits(t, e) - mx);
      z += p[e];
    }
    for (double& v : p) v /= z;
    std::vector<std::size_t> idx(num_experts);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return p[i] > p[j]; });
    idx.resize(top_k);
    double sel = 0.0;
    for (std::size_t e : idx) sel += p[e];
    for (std::size_t e : idx) gates[t].push_back(config.renormalize_gates ? p[e] / sel : p[e]);
    chosen[t] = std::move(idx);
  }

  std::size_t capacity = num_tokens * top_k;
  if (config.capacity_factor) {
    const double expected = static_cast<double>(num_tokens * top_k) * *config.capacity_factor /
                            static_cast<double>(num_experts);
    const double nearest = std::round(expected);
    capacity = std::abs(expected - nearest) <= 1e-9 * std::max(1.0, nearest) ? static_cast<std::size_t>(nearest)
                                                                           : static_cast<std::size_t>(std::ceil(expected));
  }

  DenseMatrix y(num_tokens, hidden);
  for (std::size_t e = 0; e < num_experts; ++e) {
    // Tokens routed to e in ascending order, truncated at capacity.
    std::vector<std::pair<std::size_t, double>> members;
    for (std::size_t t = 0; t < num_tokens; ++t) {
      for (std::size_t s = 0; s < top_k; ++s) {
        if (chosen[t][s] == e) members.emplace_back(t, gates[t][s]);
      }
    }
    if (members.size() > capacity) members.resize(capacity);
    if (members.empty()) continue;

    DenseMatrix xe(members.size(), hidden);
    for (std::size_t i = 0; i < members.size(); ++i) {
      for (std::size_t c = 0; c < hidden; ++c) xe(i, c) = x(members[i].first, c);
    }
    DenseMatrix w1e(hidden, ffn);
    for (std::size_t r = 0; r < hidden; ++r) {
      for (std::size_t c = 0; c < ffn; ++c) w1e(r, c) = w.w1(r, e * ffn + c);
    }
    DenseMatrix w2e(ffn, hidden);
    for (std::size_t r = 0; r < ffn; ++r) {
      for (std::size_t c = 0; c < hidden; ++c) w2e(r, c) = w.w2(e * ffn + r, c);
    }
    DenseMatrix h = naive_matmul(xe, w1e);
    for (double& v : h.data()) v = apply_activation(config.activation, v);
    DenseMatrix ye = naive_matmul(h, w2e);
    for (std::size_t i = 0; i < members.size(); ++i) {
      for (std::size_t c = 0; c < hidden; ++c) y(members[i].first, c) += members[i].second * ye(i, c);
    }
  }
  return y;
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& loss,
                                     std::span<const double> params, double h) {
  std::vector<double> p(params.begin(), params.end());
  std::vector<double> grad(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + h;
    const double up = loss(p);
    p[i] = saved - h;
    const double down = loss(p);
    p[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

DenseMatrix finite_diff_grad(DenseMatrix& param, const std::function<double()>& loss, double h) {
  DenseMatrix grad(param.rows(), param.cols());
  auto p = param.data();
  auto g = grad.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + h;
    const double up = loss();
    p[i] = saved - h;
    const double down = loss();
    p[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double max_rel_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("max_rel_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({1e-8, std::abs(a[i]), std::abs(b[i])});
    const double err = std::abs(a[i] - b[i]) / denom;
    if (!(err <= worst)) worst = err;
  }
  return worst;
}

double max_rel_error(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("max_rel_error: " + a.shape_string() + " vs " + b.shape_string());
  }
  return max_rel_error(a.data(), b.data());
}

}  // namespace dmoe::oracle

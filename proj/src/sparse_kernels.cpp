// SPDX-License-Identifier: Apache-2.0

#include "dmoe/sparse_kernels.hpp"

#include <algorithm>
#include <string>

#include "dmoe/instrumentation.hpp"
#include "dmoe/parallel.hpp"

namespace dmoe {

namespace {

// Read-only strided window over a dense matrix, optionally transposed.
struct StridedView {
  const double* data;
  std::size_t row_stride;
  std::size_t col_stride;

  StridedView(const DenseMatrix& m, Transpose t)
      : data(m.data().data()),
        row_stride(t == Transpose::kYes ? 1 : m.cols()),
        col_stride(t == Transpose::kYes ? m.cols() : 1) {}

  double operator()(std::size_t r, std::size_t c) const { return data[r * row_stride + c * col_stride]; }
};

std::string describe(const DenseMatrix& m, Transpose t) {
  return m.shape_string() + (t == Transpose::kYes ? "^T" : "");
}

std::string describe(const BlockSparseMatrix& s, Transpose t) {
  return std::to_string(s.rows()) + "x" + std::to_string(s.cols()) + " sparse" +
         (t == Transpose::kYes ? "^T" : "");
}

void count_flops(std::uint64_t n) { counters().sparse_flops.fetch_add(n, std::memory_order_relaxed); }

}  // namespace

BlockSparseMatrix sdd(const DenseMatrix& a, const DenseMatrix& b, const TopologyPtr& out_topology,
                      Transpose transpose_a, Transpose transpose_b) {
  const auto& t = *out_topology;
  const std::size_t m = eff_rows(a, transpose_a);
  const std::size_t k = eff_cols(a, transpose_a);
  const std::size_t n = eff_cols(b, transpose_b);
  if (k != eff_rows(b, transpose_b)) {
    throw ShapeError("sdd: inner dimensions disagree, " + describe(a, transpose_a) + " * " +
                     describe(b, transpose_b));
  }
  if (m != t.rows() || n != t.cols()) {
    throw ShapeError("sdd: product is " + std::to_string(m) + "x" + std::to_string(n) +
                     " but output topology is " + std::to_string(t.rows()) + "x" +
                     std::to_string(t.cols()));
  }

  BlockSparseMatrix out(out_topology);
  const std::size_t bs = t.block_size();
  const StridedView av(a, transpose_a);
  const StridedView bv(b, transpose_b);
  parallel_for(t.nnz_blocks(), [&](std::size_t blk) {
    const auto [br, bc] = t.coord(blk);
    auto dst = out.block(blk);
    for (std::size_t i = 0; i < bs; ++i) {
      double* drow = dst.data() + i * bs;
      const std::size_t row = br * bs + i;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = av(row, p);
        for (std::size_t j = 0; j < bs; ++j) drow[j] += aip * bv(p, bc * bs + j);
      }
    }
    count_flops(2ull * bs * bs * k);
  });
  return out;
}

DenseMatrix dsd(const BlockSparseMatrix& s, const DenseMatrix& b, Transpose transpose_s,
                Transpose transpose_b) {
  const auto& t = s.topology();
  const bool ts = transpose_s == Transpose::kYes;
  const std::size_t m = ts ? s.cols() : s.rows();
  const std::size_t k = ts ? s.rows() : s.cols();
  const std::size_t n = eff_cols(b, transpose_b);
  if (k != eff_rows(b, transpose_b)) {
    throw ShapeError("dsd: inner dimensions disagree, " + describe(s, transpose_s) + " * " +
                     describe(b, transpose_b));
  }

  DenseMatrix out(m, n);
  const std::size_t bs = t.block_size();
  const StridedView bv(b, transpose_b);
  double* po = out.data().data();

  // One output tile row per work item: a block-row of op(s).
  const std::size_t tiles = ts ? t.n_block_cols() : t.n_block_rows();
  parallel_for(tiles, [&](std::size_t tile) {
    std::uint64_t flops = 0;
    auto accumulate = [&](std::span<const double> blk, std::size_t inner_block, bool transposed) {
      for (std::size_t i = 0; i < bs; ++i) {
        double* orow = po + (tile * bs + i) * n;
        for (std::size_t p = 0; p < bs; ++p) {
          const double sv = transposed ? blk[p * bs + i] : blk[i * bs + p];
          const std::size_t inner = inner_block * bs + p;
          for (std::size_t j = 0; j < n; ++j) orow[j] += sv * bv(inner, j);
        }
      }
      flops += 2ull * bs * bs * n;
    };
    if (!ts) {
      for (std::size_t q = t.row_offsets()[tile]; q < t.row_offsets()[tile + 1]; ++q) {
        accumulate(s.block(q), t.col_indices()[q], false);
      }
    } else {
      for (std::size_t i = t.t_col_offsets()[tile]; i < t.t_col_offsets()[tile + 1]; ++i) {
        const std::size_t off = t.t_block_offsets()[i];
        accumulate(s.block(off), t.row_indices()[off], true);
      }
    }
    count_flops(flops);
  });
  return out;
}

DenseMatrix dds(const DenseMatrix& a, const BlockSparseMatrix& s, Transpose transpose_a,
                Transpose transpose_s) {
  const auto& t = s.topology();
  const bool ts = transpose_s == Transpose::kYes;
  const std::size_t m = eff_rows(a, transpose_a);
  const std::size_t k = eff_cols(a, transpose_a);
  const std::size_t ks = ts ? s.cols() : s.rows();
  const std::size_t n = ts ? s.rows() : s.cols();
  if (k != ks) {
    throw ShapeError("dds: inner dimensions disagree, " + describe(a, transpose_a) + " * " +
                     describe(s, transpose_s));
  }

  DenseMatrix out(m, n);
  const std::size_t bs = t.block_size();
  const StridedView av(a, transpose_a);
  double* po = out.data().data();

  // One output tile row (bs rows of the dense result) per work item. Within
  // a tile, output block-column j of op(s) is block-column j of s (walked
  // through the transpose index) or block-row j of s (walked as BCSR).
  const std::size_t out_block_cols = ts ? t.n_block_rows() : t.n_block_cols();
  const std::size_t tiles = (m + bs - 1) / bs;
  parallel_for(tiles, [&](std::size_t tile) {
    const std::size_t row_begin = tile * bs;
    const std::size_t row_end = std::min(m, row_begin + bs);
    std::uint64_t flops = 0;
    auto accumulate = [&](std::size_t out_col_block, std::span<const double> blk,
                          std::size_t inner_block, bool transposed) {
      for (std::size_t i = row_begin; i < row_end; ++i) {
        double* orow = po + i * n + out_col_block * bs;
        for (std::size_t p = 0; p < bs; ++p) {
          const double aip = av(i, inner_block * bs + p);
          for (std::size_t q = 0; q < bs; ++q) {
            orow[q] += aip * (transposed ? blk[q * bs + p] : blk[p * bs + q]);
          }
        }
      }
      flops += 2ull * (row_end - row_begin) * bs * bs;
    };
    for (std::size_t j = 0; j < out_block_cols; ++j) {
      if (!ts) {
        for (std::size_t i = t.t_col_offsets()[j]; i < t.t_col_offsets()[j + 1]; ++i) {
          const std::size_t off = t.t_block_offsets()[i];
          accumulate(j, s.block(off), t.row_indices()[off], false);
        }
      } else {
        for (std::size_t q = t.row_offsets()[j]; q < t.row_offsets()[j + 1]; ++q) {
          accumulate(j, s.block(q), t.col_indices()[q], true);
        }
      }
    }
    count_flops(flops);
  });
  return out;
}

BlockSparseMatrix sparse_map(const BlockSparseMatrix& s, Activation kind, ActivationMode mode) {
  BlockSparseMatrix out(s.topology_ptr());
  auto in = s.values();
  auto o = out.values();
  if (mode == ActivationMode::kForward) {
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = activate(kind, in[i]);
  } else {
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = activate_grad(kind, in[i]);
  }
  return out;
}

BlockSparseMatrix sparse_hadamard(const BlockSparseMatrix& a, const BlockSparseMatrix& b) {
  if (a.topology_ptr() != b.topology_ptr() && !(a.topology() == b.topology())) {
    throw ShapeError("sparse_hadamard: operands have different topologies");
  }
  BlockSparseMatrix out(a.topology_ptr());
  auto x = a.values();
  auto y = b.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  return out;
}

}  // namespace dmoe

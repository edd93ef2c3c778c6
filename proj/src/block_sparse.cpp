// SPDX-License-Identifier: Apache-2.0

#include "dmoe/block_sparse.hpp"

#include <algorithm>
#include <sstream>

namespace dmoe {

namespace {

[[noreturn]] void fail(const std::string& what) { throw TopologyError("topology: " + what); }

void check_csr(std::size_t block_size, std::size_t n_block_rows, std::size_t n_block_cols,
               std::span<const std::size_t> row_offsets, std::span<const std::size_t> col_indices) {
  if (block_size == 0) fail("block_size must be positive");
  if (row_offsets.size() != n_block_rows + 1) {
    fail("row_offsets has " + std::to_string(row_offsets.size()) + " entries, expected " +
         std::to_string(n_block_rows + 1));
  }
  if (row_offsets.front() != 0) fail("row_offsets[0] must be 0");
  if (row_offsets.back() != col_indices.size()) {
    fail("row_offsets[last]=" + std::to_string(row_offsets.back()) + " but nnz_blocks=" +
         std::to_string(col_indices.size()));
  }
  for (std::size_t r = 0; r < n_block_rows; ++r) {
    if (row_offsets[r] > row_offsets[r + 1]) fail("row_offsets decrease at row " + std::to_string(r));
    for (std::size_t k = row_offsets[r]; k < row_offsets[r + 1]; ++k) {
      if (col_indices[k] >= n_block_cols) {
        fail("block (" + std::to_string(r) + "," + std::to_string(col_indices[k]) +
             ") out of range for " + std::to_string(n_block_cols) + " block columns");
      }
      if (k > row_offsets[r] && col_indices[k] <= col_indices[k - 1]) {
        fail("col_indices not strictly increasing in block row " + std::to_string(r));
      }
    }
  }
}

}  // namespace

BlockTopology BlockTopology::from_csr(std::size_t block_size, std::size_t n_block_rows,
                                      std::size_t n_block_cols, std::vector<std::size_t> row_offsets,
                                      std::vector<std::size_t> col_indices) {
  check_csr(block_size, n_block_rows, n_block_cols, row_offsets, col_indices);
  BlockTopology t;
  t.block_size_ = block_size;
  t.n_block_rows_ = n_block_rows;
  t.n_block_cols_ = n_block_cols;
  t.row_offsets_ = std::move(row_offsets);
  t.col_indices_ = std::move(col_indices);
  return build_transpose_index(t);
}

std::size_t BlockTopology::metadata_entries() const {
  return col_indices_.size() + row_indices_.size() + t_block_offsets_.size();
}

void BlockTopology::check_invariants() const {
  check_csr(block_size_, n_block_rows_, n_block_cols_, row_offsets_, col_indices_);
  const std::size_t nnz = nnz_blocks();
  if (row_indices_.size() != nnz) fail("row_indices length differs from nnz_blocks");
  for (std::size_t r = 0; r < n_block_rows_; ++r) {
    for (std::size_t k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) {
      if (row_indices_[k] != r) fail("row_indices disagrees with row_offsets at block " + std::to_string(k));
    }
  }
  if (t_col_offsets_.size() != n_block_cols_ + 1 || t_col_offsets_.front() != 0 ||
      t_col_offsets_.back() != nnz) {
    fail("t_col_offsets malformed");
  }
  if (t_block_offsets_.size() != nnz) fail("t_block_offsets length differs from nnz_blocks");
  std::vector<bool> seen(nnz, false);
  for (std::size_t c = 0; c < n_block_cols_; ++c) {
    if (t_col_offsets_[c] > t_col_offsets_[c + 1]) fail("t_col_offsets decrease");
    for (std::size_t i = t_col_offsets_[c]; i < t_col_offsets_[c + 1]; ++i) {
      const std::size_t off = t_block_offsets_[i];
      if (off >= nnz || seen[off]) fail("t_block_offsets is not a permutation");
      seen[off] = true;
      if (col_indices_[off] != c) fail("t_block_offsets lists a block under the wrong column");
      if (i > t_col_offsets_[c] && row_indices_[t_block_offsets_[i - 1]] >= row_indices_[off]) {
        fail("transposed order not sorted by row within column " + std::to_string(c));
      }
    }
  }
}

BlockTopology build_transpose_index(const BlockTopology& t) {
  BlockTopology out = t;
  const std::size_t nnz = t.nnz_blocks();

  out.row_indices_.assign(nnz, 0);
  for (std::size_t r = 0; r < t.n_block_rows_; ++r) {
    for (std::size_t k = t.row_offsets_[r]; k < t.row_offsets_[r + 1]; ++k) out.row_indices_[k] = r;
  }

  // Counting sort by column. Blocks are visited in storage (row-major) order,
  // so each column bucket ends up sorted by row.
  out.t_col_offsets_.assign(t.n_block_cols_ + 1, 0);
  for (std::size_t c : t.col_indices_) ++out.t_col_offsets_[c + 1];
  for (std::size_t c = 0; c < t.n_block_cols_; ++c) out.t_col_offsets_[c + 1] += out.t_col_offsets_[c];

  std::vector<std::size_t> cursor(out.t_col_offsets_.begin(), out.t_col_offsets_.end() - 1);
  out.t_block_offsets_.assign(nnz, 0);
  for (std::size_t k = 0; k < nnz; ++k) out.t_block_offsets_[cursor[t.col_indices_[k]]++] = k;
  return out;
}

BlockTopology topology_from_blocks(std::span<const BlockCoord> coords, std::size_t n_block_rows,
                                   std::size_t n_block_cols, std::size_t block_size) {
  if (block_size == 0) fail("block_size must be positive");
  std::vector<BlockCoord> sorted(coords.begin(), coords.end());
  for (const auto& b : sorted) {
    if (b.row >= n_block_rows || b.col >= n_block_cols) {
      fail("block (" + std::to_string(b.row) + "," + std::to_string(b.col) + ") outside " +
           std::to_string(n_block_rows) + "x" + std::to_string(n_block_cols) + " block grid");
    }
  }
  std::sort(sorted.begin(), sorted.end());
  auto dup = std::adjacent_find(sorted.begin(), sorted.end());
  if (dup != sorted.end()) {
    fail("duplicate block (" + std::to_string(dup->row) + "," + std::to_string(dup->col) + ")");
  }

  std::vector<std::size_t> row_offsets(n_block_rows + 1, 0);
  std::vector<std::size_t> col_indices;
  col_indices.reserve(sorted.size());
  for (const auto& b : sorted) {
    ++row_offsets[b.row + 1];
    col_indices.push_back(b.col);
  }
  for (std::size_t r = 0; r < n_block_rows; ++r) row_offsets[r + 1] += row_offsets[r];
  return BlockTopology::from_csr(block_size, n_block_rows, n_block_cols, std::move(row_offsets),
                                 std::move(col_indices));
}

std::string dump_topology(const BlockTopology& t) {
  std::ostringstream os;
  for (std::size_t k = 0; k < t.nnz_blocks(); ++k) {
    os << t.row_indices()[k] << ' ' << t.col_indices()[k] << ' ' << k << '\n';
  }
  return os.str();
}

BlockSparseMatrix::BlockSparseMatrix(TopologyPtr topology)
    : topology_(std::move(topology)), values_(topology_->nnz_blocks() * topology_->block_elems(), 0.0) {}

BlockSparseMatrix::BlockSparseMatrix(TopologyPtr topology, Storage values)
    : topology_(std::move(topology)), values_(std::move(values)) {
  if (values_.size() != topology_->nnz_blocks() * topology_->block_elems()) {
    throw ShapeError("BlockSparseMatrix: " + std::to_string(values_.size()) + " values for " +
                     std::to_string(topology_->nnz_blocks()) + " blocks of size " +
                     std::to_string(topology_->block_size()));
  }
}

DenseMatrix to_dense(const BlockSparseMatrix& s) {
  const auto& t = s.topology();
  const std::size_t bs = t.block_size();
  DenseMatrix d(t.rows(), t.cols());
  for (std::size_t k = 0; k < t.nnz_blocks(); ++k) {
    const auto [br, bc] = t.coord(k);
    auto blk = s.block(k);
    for (std::size_t i = 0; i < bs; ++i) {
      for (std::size_t j = 0; j < bs; ++j) d(br * bs + i, bc * bs + j) = blk[i * bs + j];
    }
  }
  return d;
}

DenseMatrix to_dense_transposed(const BlockSparseMatrix& s) {
  const auto& t = s.topology();
  const std::size_t bs = t.block_size();
  DenseMatrix d(t.cols(), t.rows());
  for_each_block_transposed(t, [&](BlockCoord c, std::size_t off) {
    auto blk = s.block(off);
    for (std::size_t i = 0; i < bs; ++i) {
      for (std::size_t j = 0; j < bs; ++j) d(c.col * bs + j, c.row * bs + i) = blk[i * bs + j];
    }
  });
  return d;
}

BlockSparseMatrix from_dense(const DenseMatrix& d, TopologyPtr topology) {
  const auto& t = *topology;
  if (d.rows() != t.rows() || d.cols() != t.cols()) {
    throw ShapeError("from_dense: dense " + d.shape_string() + " vs topology " +
                     std::to_string(t.rows()) + "x" + std::to_string(t.cols()));
  }
  BlockSparseMatrix s(topology);
  const std::size_t bs = t.block_size();
  for (std::size_t k = 0; k < t.nnz_blocks(); ++k) {
    const auto [br, bc] = t.coord(k);
    auto blk = s.block(k);
    for (std::size_t i = 0; i < bs; ++i) {
      for (std::size_t j = 0; j < bs; ++j) blk[i * bs + j] = d(br * bs + i, bc * bs + j);
    }
  }
  return s;
}

}  // namespace dmoe

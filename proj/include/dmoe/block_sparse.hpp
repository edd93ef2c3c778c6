// SPDX-License-Identifier: Apache-2.0
//
// Hybrid blocked-CSR-COO sparse format with transpose indices.
//
// A BlockTopology describes which square blocks of a block grid are nonzero.
// Blocks are numbered in BCSR order (row-major over the block grid). On top of
// the usual row_offsets / col_indices pair we keep:
//
//   row_indices      the block-row of every nonzero block, so any block can
//                    locate its coordinates with a single load.
//   t_col_offsets    per block-column offsets into t_block_offsets.
//   t_block_offsets  the storage offset (in blocks) of every nonzero block,
//                    listed in column-major order. Iterating a block-column
//                    goes through this indirection; values are never moved.
//
// Topologies are immutable once built and are shared between matrices.

#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmoe/dense.hpp"

namespace dmoe {

class TopologyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct BlockCoord {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const BlockCoord&, const BlockCoord&) = default;
  friend auto operator<=>(const BlockCoord&, const BlockCoord&) = default;
};

class BlockTopology {
 public:
  // Builds from BCSR arrays and derives row_indices and the transpose index.
  // Throws TopologyError if the arrays are inconsistent.
  static BlockTopology from_csr(std::size_t block_size, std::size_t n_block_rows,
                                std::size_t n_block_cols, std::vector<std::size_t> row_offsets,
                                std::vector<std::size_t> col_indices);

  std::size_t block_size() const { return block_size_; }
  std::size_t n_block_rows() const { return n_block_rows_; }
  std::size_t n_block_cols() const { return n_block_cols_; }
  std::size_t nnz_blocks() const { return col_indices_.size(); }
  std::size_t rows() const { return n_block_rows_ * block_size_; }
  std::size_t cols() const { return n_block_cols_ * block_size_; }
  std::size_t block_elems() const { return block_size_ * block_size_; }

  std::span<const std::size_t> row_offsets() const { return row_offsets_; }
  std::span<const std::size_t> col_indices() const { return col_indices_; }
  std::span<const std::size_t> row_indices() const { return row_indices_; }
  std::span<const std::size_t> t_col_offsets() const { return t_col_offsets_; }
  std::span<const std::size_t> t_block_offsets() const { return t_block_offsets_; }

  BlockCoord coord(std::size_t block) const { return {row_indices_[block], col_indices_[block]}; }

  // Index entries stored per nonzero block: column index, row index and
  // transpose offset.
  static constexpr std::size_t kMetadataPerBlock = 3;
  std::size_t metadata_entries() const;

  // Throws TopologyError describing the first violated invariant.
  void check_invariants() const;

  friend bool operator==(const BlockTopology&, const BlockTopology&) = default;

 private:
  friend BlockTopology build_transpose_index(const BlockTopology& t);

  BlockTopology() = default;

  std::size_t block_size_ = 1;
  std::size_t n_block_rows_ = 0;
  std::size_t n_block_cols_ = 0;
  std::vector<std::size_t> row_offsets_;
  std::vector<std::size_t> col_indices_;
  std::vector<std::size_t> row_indices_;
  std::vector<std::size_t> t_col_offsets_;
  std::vector<std::size_t> t_block_offsets_;
};

using TopologyPtr = std::shared_ptr<const BlockTopology>;

// Builds a topology from a set of block coordinates (any order).
// Throws TopologyError on duplicate or out-of-range coordinates, or a zero block size.
BlockTopology topology_from_blocks(std::span<const BlockCoord> coords, std::size_t n_block_rows,
                                   std::size_t n_block_cols, std::size_t block_size);

// Recomputes row_indices and the transpose index from the CSR part.
BlockTopology build_transpose_index(const BlockTopology& t);

// `r c storage_offset` per block, one per line, in storage order.
std::string dump_topology(const BlockTopology& t);

// Visits blocks in transposed (column-major) order: fn(coord, storage_offset).
template <typename Fn>
void for_each_block_transposed(const BlockTopology& t, Fn&& fn) {
  for (std::size_t c = 0; c < t.n_block_cols(); ++c) {
    for (std::size_t i = t.t_col_offsets()[c]; i < t.t_col_offsets()[c + 1]; ++i) {
      const std::size_t off = t.t_block_offsets()[i];
      fn(t.coord(off), off);
    }
  }
}

class BlockSparseMatrix {
 public:
  using Storage = std::vector<double, CountingAllocator<double, AllocKind::kSparseValues>>;

  // Zero-valued blocks for every nonzero position of the topology.
  explicit BlockSparseMatrix(TopologyPtr topology);
  BlockSparseMatrix(TopologyPtr topology, Storage values);

  const BlockTopology& topology() const { return *topology_; }
  const TopologyPtr& topology_ptr() const { return topology_; }

  std::size_t rows() const { return topology_->rows(); }
  std::size_t cols() const { return topology_->cols(); }
  std::size_t block_size() const { return topology_->block_size(); }
  std::size_t nnz_blocks() const { return topology_->nnz_blocks(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  // Row-major values of the block at storage offset `k`.
  std::span<double> block(std::size_t k) {
    return {values_.data() + k * topology_->block_elems(), topology_->block_elems()};
  }
  std::span<const double> block(std::size_t k) const {
    return {values_.data() + k * topology_->block_elems(), topology_->block_elems()};
  }

  // Bitwise equality of topology and values.
  friend bool operator==(const BlockSparseMatrix& a, const BlockSparseMatrix& b) {
    return (a.topology_ == b.topology_ || *a.topology_ == *b.topology_) && a.values_ == b.values_;
  }

 private:
  TopologyPtr topology_;
  Storage values_;
};

inline TopologyPtr share(BlockTopology t) { return std::make_shared<const BlockTopology>(std::move(t)); }

DenseMatrix to_dense(const BlockSparseMatrix& s);

// Dense form of the transpose, built by walking the transpose index.
DenseMatrix to_dense_transposed(const BlockSparseMatrix& s);

// Samples exactly the blocks of `topology` from `d`. Throws ShapeError when
// the logical shapes differ.
BlockSparseMatrix from_dense(const DenseMatrix& d, TopologyPtr topology);

}  // namespace dmoe

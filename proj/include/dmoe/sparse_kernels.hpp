// SPDX-License-Identifier: Apache-2.0
//
// Block-sparse products named by a three-character code: output, left input,
// right input, with S for block-sparse and D for dense.
//
//   sdd  dense x dense sampled at a block topology (SDDMM)
//   dsd  sparse x dense
//   dds  dense x sparse
//
// Every product accepts transpose flags on both inputs. A transposed sparse
// operand is walked through its transpose index; block values are read in
// place and never copied.
//
// Tiles equal blocks. sdd parallelizes over output blocks (coordinates come
// from the COO row indices), dsd and dds over output tile rows. Each output
// element is accumulated by one worker in ascending inner-index order, so
// results are bitwise independent of the worker count.

#pragma once

#include "dmoe/block_sparse.hpp"
#include "dmoe/dense.hpp"

namespace dmoe {

BlockSparseMatrix sdd(const DenseMatrix& a, const DenseMatrix& b, const TopologyPtr& out_topology,
                      Transpose transpose_a = Transpose::kNo, Transpose transpose_b = Transpose::kNo);

DenseMatrix dsd(const BlockSparseMatrix& s, const DenseMatrix& b, Transpose transpose_s = Transpose::kNo,
                Transpose transpose_b = Transpose::kNo);

DenseMatrix dds(const DenseMatrix& a, const BlockSparseMatrix& s, Transpose transpose_a = Transpose::kNo,
                Transpose transpose_s = Transpose::kNo);

// Elementwise activation (or its derivative) over stored blocks only.
BlockSparseMatrix sparse_map(const BlockSparseMatrix& s, Activation kind,
                             ActivationMode mode = ActivationMode::kForward);

// Elementwise product of two matrices sharing one topology.
BlockSparseMatrix sparse_hadamard(const BlockSparseMatrix& a, const BlockSparseMatrix& b);

}  // namespace dmoe

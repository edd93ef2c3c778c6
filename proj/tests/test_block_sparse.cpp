// SPDX-License-Identifier: Apache-2.0

#include <vector>

#include "doctest.h"
#include "dmoe/block_sparse.hpp"
#include "dmoe/oracles.hpp"
#include "dmoe/testing.hpp"

using namespace dmoe;

namespace {

std::vector<std::size_t> vec(std::span<const std::size_t> s) { return {s.begin(), s.end()}; }

BlockTopology example() {
  const std::vector<BlockCoord> coords{{0, 0}, {0, 2}, {1, 1}};
  return topology_from_blocks(coords, 2, 3, 2);
}

}  // namespace

TEST_CASE("hybrid format arrays for a three-block example") {
  const BlockTopology t = example();
  CHECK(t.nnz_blocks() == 3);
  CHECK(vec(t.row_offsets()) == std::vector<std::size_t>{0, 2, 3});
  CHECK(vec(t.col_indices()) == std::vector<std::size_t>{0, 2, 1});
  CHECK(vec(t.row_indices()) == std::vector<std::size_t>{0, 0, 1});
  CHECK(vec(t.t_col_offsets()) == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(vec(t.t_block_offsets()) == std::vector<std::size_t>{0, 2, 1});
  CHECK(t.coord(2) == BlockCoord{1, 1});
  CHECK(t.rows() == 4);
  CHECK(t.cols() == 6);
  CHECK_NOTHROW(t.check_invariants());
}

TEST_CASE("coordinate order does not matter") {
  const std::vector<BlockCoord> shuffled{{1, 1}, {0, 2}, {0, 0}};
  CHECK(topology_from_blocks(shuffled, 2, 3, 2) == example());
}

TEST_CASE("from_csr agrees with topology_from_blocks") {
  const BlockTopology t = BlockTopology::from_csr(2, 2, 3, {0, 2, 3}, {0, 2, 1});
  CHECK(t == example());
}

TEST_CASE("from_csr rejects inconsistent arrays") {
  CHECK_THROWS_AS(BlockTopology::from_csr(2, 2, 3, {0, 2}, {0, 2, 1}), TopologyError);        // short offsets
  CHECK_THROWS_AS(BlockTopology::from_csr(2, 2, 3, {0, 2, 1}, {0, 2, 1}), TopologyError);     // decreasing
  CHECK_THROWS_AS(BlockTopology::from_csr(2, 2, 3, {0, 2, 3}, {0, 3, 1}), TopologyError);     // column range
  CHECK_THROWS_AS(BlockTopology::from_csr(2, 2, 3, {0, 2, 3}, {2, 0, 1}), TopologyError);     // unsorted row
  CHECK_THROWS_AS(BlockTopology::from_csr(2, 2, 3, {0, 2, 4}, {0, 2, 1}), TopologyError);     // nnz mismatch
  CHECK_THROWS_AS(BlockTopology::from_csr(0, 2, 3, {0, 2, 3}, {0, 2, 1}), TopologyError);     // block size
}

TEST_CASE("topology_from_blocks rejects duplicates and out-of-range blocks") {
  const std::vector<BlockCoord> dup{{0, 0}, {0, 0}};
  CHECK_THROWS_AS(topology_from_blocks(dup, 1, 1, 1), TopologyError);
  const std::vector<BlockCoord> out{{2, 0}};
  CHECK_THROWS_AS(topology_from_blocks(out, 2, 2, 1), TopologyError);
}

TEST_CASE("empty and full topologies") {
  const BlockTopology empty = topology_from_blocks({}, 3, 4, 2);
  CHECK(empty.nnz_blocks() == 0);
  CHECK(vec(empty.t_col_offsets()) == std::vector<std::size_t>(5, 0));
  CHECK_NOTHROW(empty.check_invariants());
  CHECK(to_dense(BlockSparseMatrix(share(empty))) == DenseMatrix(6, 8));

  std::vector<BlockCoord> all;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) all.push_back({r, c});
  const BlockTopology full = topology_from_blocks(all, 3, 4, 2);
  CHECK(full.nnz_blocks() == 12);
  CHECK_NOTHROW(full.check_invariants());
}

TEST_CASE("metadata is three entries per block") {
  const BlockTopology t = example();
  CHECK(t.metadata_entries() == 3 * t.nnz_blocks());
}

TEST_CASE("dump lists blocks in storage order") {
  CHECK(dump_topology(example()) == "0 0 0\n0 2 1\n1 1 2\n");
}

TEST_CASE("transposed traversal matches an explicit transpose on random topologies") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto t = testing::random_topology(rng, 1 + rng.below(9), 1 + rng.below(9), 2, rng.uniform());
    std::vector<BlockCoord> walked;
    for_each_block_transposed(t, [&](BlockCoord c, std::size_t off) {
      CHECK(t.coord(off) == c);
      walked.push_back({c.col, c.row});
    });
    CHECK(walked == oracle::explicit_transpose_coords(t));
    CHECK_NOTHROW(build_transpose_index(t).check_invariants());
    CHECK(build_transpose_index(t) == t);
  }
}

TEST_CASE("dense round trip and transposed densification") {
  Rng rng(9);
  const auto topo = share(example());
  const BlockSparseMatrix s = testing::random_sparse(rng, topo);
  const DenseMatrix d = to_dense(s);
  CHECK(d(0, 0) == s.block(0)[0]);
  CHECK(d(1, 5) == s.block(1)[3]);
  CHECK(d(2, 2) == s.block(2)[0]);
  CHECK(d(2, 0) == 0.0);
  CHECK(from_dense(d, topo) == s);
  CHECK(to_dense_transposed(s) == transpose(d));
}

TEST_CASE("from_dense samples only stored blocks and checks shape") {
  const auto topo = share(example());
  const BlockSparseMatrix s = from_dense(DenseMatrix(4, 6, 1.0), topo);
  CHECK(s.values().size() == 12);
  for (double v : s.values()) CHECK(v == 1.0);
  CHECK_THROWS_AS(from_dense(DenseMatrix(4, 5), topo), ShapeError);
}

TEST_CASE("matrices share one topology object") {
  const auto topo = share(example());
  BlockSparseMatrix a(topo), b(topo);
  CHECK(a.topology_ptr() == b.topology_ptr());
  CHECK(a == b);
  b.values()[0] = 1.0;
  CHECK_FALSE(a == b);
}

// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include "doctest.h"
#include "dmoe/dense.hpp"
#include "dmoe/oracles.hpp"
#include "dmoe/parallel.hpp"
#include "dmoe/rng.hpp"

using namespace dmoe;

TEST_CASE("construction and element access") {
  DenseMatrix m(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(1, 0) == 4.0);
  CHECK(m.row(1)[2] == 6.0);
  CHECK(m.shape_string() == "2x3");
  CHECK_THROWS_AS(DenseMatrix(2, 2, {1, 2, 3}), ShapeError);
  CHECK(DenseMatrix::identity(2) == DenseMatrix(2, 2, {1, 0, 0, 1}));
}

TEST_CASE("identity is neutral for matmul") {
  Rng rng(3);
  const DenseMatrix a = rng.uniform_matrix(5, 7);
  CHECK(matmul(a, DenseMatrix::identity(7)) == a);
  CHECK(matmul(DenseMatrix::identity(5), a) == a);
}

TEST_CASE("matmul equals the naive triple loop bitwise for every transpose pair") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(9), k = 1 + rng.below(9), n = 1 + rng.below(9);
    for (bool ta : {false, true}) {
      for (bool tb : {false, true}) {
        const DenseMatrix a = ta ? rng.uniform_matrix(k, m) : rng.uniform_matrix(m, k);
        const DenseMatrix b = tb ? rng.uniform_matrix(n, k) : rng.uniform_matrix(k, n);
        const DenseMatrix got = matmul(a, b, as_transpose(ta), as_transpose(tb));
        CHECK(got == oracle::naive_matmul(a, b, as_transpose(ta), as_transpose(tb)));
        CHECK(got.rows() == m);
        CHECK(got.cols() == n);
      }
    }
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  CHECK_THROWS_AS(matmul(DenseMatrix(2, 3), DenseMatrix(2, 3)), ShapeError);
  CHECK_NOTHROW(matmul(DenseMatrix(2, 3), DenseMatrix(2, 3), Transpose::kNo, Transpose::kYes));
}

TEST_CASE("matmul is independent of the worker count") {
  Rng rng(5);
  const DenseMatrix a = rng.uniform_matrix(37, 19);
  const DenseMatrix b = rng.uniform_matrix(19, 23);
  DenseMatrix ref;
  {
    ScopedWorkers w(1);
    ref = matmul(a, b);
  }
  for (std::size_t workers : {2, 8}) {
    ScopedWorkers w(workers);
    CHECK(matmul(a, b) == ref);
  }
}

TEST_CASE("transpose") {
  const DenseMatrix a(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(transpose(a) == DenseMatrix(3, 2, {1, 4, 2, 5, 3, 6}));
  CHECK(transpose(transpose(a)) == a);
}

TEST_CASE("softmax of [1,2,3]") {
  const DenseMatrix p = softmax_rows(DenseMatrix(1, 3, {1, 2, 3}));
  CHECK(p(0, 0) == doctest::Approx(0.09003057).epsilon(1e-7));
  CHECK(p(0, 1) == doctest::Approx(0.24472847).epsilon(1e-7));
  CHECK(p(0, 2) == doctest::Approx(0.66524096).epsilon(1e-7));
}

TEST_CASE("softmax is stable for large logits and rows sum to one") {
  const DenseMatrix p = softmax_rows(DenseMatrix(2, 3, {1000, 1001, 1002, -5, 0, 5}));
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0.0;
    for (double v : p.row(r)) {
      CHECK(std::isfinite(v));
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK(p(0, 2) == doctest::Approx(0.66524096).epsilon(1e-7));
}

TEST_CASE("activation values") {
  CHECK(activate(Activation::kGelu, 1.0) == doctest::Approx(0.8412).epsilon(1e-4));
  CHECK(activate(Activation::kGelu, 0.0) == 0.0);
  CHECK(activate(Activation::kRelu, -2.0) == 0.0);
  CHECK(activate(Activation::kRelu, 2.5) == 2.5);
  CHECK(activate(Activation::kIdentity, -3.0) == -3.0);
  CHECK(activate_grad(Activation::kRelu, 0.0) == 0.0);
  CHECK(activate_grad(Activation::kRelu, 1.0) == 1.0);
  CHECK(activate_grad(Activation::kIdentity, 7.0) == 1.0);
}

TEST_CASE("activation derivatives match central differences") {
  for (Activation kind : {Activation::kIdentity, Activation::kGelu}) {
    for (double x = -3.0; x <= 3.0; x += 0.37) {
      const double h = 1e-5;
      const double fd = (activate(kind, x + h) - activate(kind, x - h)) / (2 * h);
      CHECK(activate_grad(kind, x) == doctest::Approx(fd).epsilon(1e-8));
    }
  }
}

TEST_CASE("matrix activation in both modes") {
  const DenseMatrix a(1, 3, {-1.0, 0.0, 2.0});
  CHECK(activation(Activation::kRelu, a, ActivationMode::kForward) == DenseMatrix(1, 3, {0.0, 0.0, 2.0}));
  CHECK(activation(Activation::kRelu, a, ActivationMode::kGrad) == DenseMatrix(1, 3, {0.0, 0.0, 1.0}));
}

TEST_CASE("activation names round-trip") {
  for (Activation kind : {Activation::kIdentity, Activation::kRelu, Activation::kGelu}) {
    CHECK(parse_activation(activation_name(kind)) == kind);
  }
  CHECK_THROWS(parse_activation("swish"));
}

TEST_CASE("elementwise helpers") {
  const DenseMatrix a(1, 2, {1, -2});
  const DenseMatrix b(1, 2, {3, 4});
  CHECK(add(a, b) == DenseMatrix(1, 2, {4, 2}));
  CHECK(subtract(a, b) == DenseMatrix(1, 2, {-2, -6}));
  CHECK(hadamard(a, b) == DenseMatrix(1, 2, {3, -8}));
  CHECK(scale(a, 2.0) == DenseMatrix(1, 2, {2, -4}));
  CHECK(sum_squares(a) == 5.0);
  CHECK(max_abs_diff(a, b) == 6.0);
  CHECK_THROWS_AS(add(a, DenseMatrix(2, 1)), ShapeError);
}

TEST_CASE("max_abs_diff propagates NaN") {
  const DenseMatrix a(1, 2, {0.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK(std::isnan(max_abs_diff(a, DenseMatrix(1, 2))));
}

// SPDX-License-Identifier: Apache-2.0

#include "dmoe/dense.hpp"

#include <algorithm>
#include <cmath>

#include "dmoe/parallel.hpp"

namespace dmoe {

namespace {

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCubic = 0.044715;

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

template <typename Fn>
DenseMatrix zip_with(const DenseMatrix& a, const DenseMatrix& b, const char* op, Fn fn) {
  require_same_shape(a, b, op);
  DenseMatrix out(a.rows(), a.cols());
  auto x = a.data();
  auto y = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fn(x[i], y[i]);
  return out;
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::span<const double> values)
    : rows_(rows), cols_(cols), data_(values.begin(), values.end()) {
  if (values.size() != rows * cols) {
    throw ShapeError("DenseMatrix: " + std::to_string(values.size()) + " values for shape " +
                     shape_string());
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::string DenseMatrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix out(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  }
  return out;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b, Transpose transpose_a,
                   Transpose transpose_b) {
  const std::size_t m = eff_rows(a, transpose_a);
  const std::size_t k = eff_cols(a, transpose_a);
  const std::size_t kb = eff_rows(b, transpose_b);
  const std::size_t n = eff_cols(b, transpose_b);
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions disagree, a is " + a.shape_string() +
                     (transpose_a == Transpose::kYes ? " (transposed)" : "") + ", b is " +
                     b.shape_string() + (transpose_b == Transpose::kYes ? " (transposed)" : ""));
  }

  // Strides of op(a) and op(b) over the underlying row-major storage.
  const std::size_t a_row = transpose_a == Transpose::kYes ? 1 : a.cols();
  const std::size_t a_inner = transpose_a == Transpose::kYes ? a.cols() : 1;
  const std::size_t b_inner = transpose_b == Transpose::kYes ? 1 : b.cols();
  const std::size_t b_col = transpose_b == Transpose::kYes ? b.cols() : 1;

  DenseMatrix out(m, n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  parallel_for(m, [&](std::size_t i) {
    double* orow = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa[i * a_row + p * a_inner];
      const double* bp = pb + p * b_inner;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * bp[j * b_col];
    }
  });
  return out;
}

DenseMatrix softmax_rows(const DenseMatrix& a) {
  DenseMatrix out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto in = a.row(r);
    auto o = out.row(r);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (double& v : o) v /= sum;
  }
  return out;
}

Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "gelu") return Activation::kGelu;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation kind) {
  switch (kind) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kGelu: return "gelu";
  }
  return "unknown";
}

double activate(Activation kind, double x) {
  switch (kind) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kGelu: {
      const double inner = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
      return 0.5 * x * (1.0 + std::tanh(inner));
    }
  }
  return x;
}

double activate_grad(Activation kind, double x) {
  switch (kind) {
    case Activation::kIdentity: return 1.0;
    case Activation::kRelu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::kGelu: {
      const double inner = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
      const double t = std::tanh(inner);
      const double d_inner = kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner;
    }
  }
  return 1.0;
}

DenseMatrix activation(Activation kind, const DenseMatrix& a, ActivationMode mode) {
  DenseMatrix out(a.rows(), a.cols());
  auto in = a.data();
  auto o = out.data();
  if (mode == ActivationMode::kForward) {
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = activate(kind, in[i]);
  } else {
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = activate_grad(kind, in[i]);
  }
  return out;
}

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  return zip_with(a, b, "add", [](double x, double y) { return x + y; });
}

DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b) {
  return zip_with(a, b, "subtract", [](double x, double y) { return x - y; });
}

DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
  return zip_with(a, b, "hadamard", [](double x, double y) { return x * y; });
}

DenseMatrix scale(const DenseMatrix& a, double s) {
  DenseMatrix out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::abs(x[i] - y[i]);
    if (!(d <= worst)) worst = d;  // NaN propagates
  }
  return worst;
}

double sum_squares(const DenseMatrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return s;
}

}  // namespace dmoe

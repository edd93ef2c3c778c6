// SPDX-License-Identifier: Apache-2.0
//
// Row-major dense matrices of doubles plus the handful of dense operations
// the rest of the library is built on: matmul with transpose flags, row
// softmax and elementwise activations.

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dmoe/instrumentation.hpp"

namespace dmoe {

// Raised whenever operand shapes are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DenseMatrix {
 public:
  using Storage = std::vector<double, CountingAllocator<double, AllocKind::kDense>>;

  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  // Takes row-major values; values.size() must equal rows * cols.
  DenseMatrix(std::size_t rows, std::size_t cols, std::span<const double> values);
  DenseMatrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values)
      : DenseMatrix(rows, cols, std::span<const double>(values.begin(), values.size())) {}

  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  // "RxC" for error messages.
  std::string shape_string() const;

  friend bool operator==(const DenseMatrix& a, const DenseMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Storage data_;
};

enum class Transpose : bool { kNo = false, kYes = true };

inline constexpr Transpose as_transpose(bool t) { return t ? Transpose::kYes : Transpose::kNo; }

// Effective (rows, cols) of a matrix after an optional transpose.
inline std::size_t eff_rows(const DenseMatrix& m, Transpose t) {
  return t == Transpose::kYes ? m.cols() : m.rows();
}
inline std::size_t eff_cols(const DenseMatrix& m, Transpose t) {
  return t == Transpose::kYes ? m.rows() : m.cols();
}

DenseMatrix transpose(const DenseMatrix& a);

// op(a) * op(b). Each output element is a single accumulation over the inner
// index in ascending order, starting from zero.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b, Transpose transpose_a = Transpose::kNo,
                   Transpose transpose_b = Transpose::kNo);

// Numerically stable row-wise softmax.
DenseMatrix softmax_rows(const DenseMatrix& a);

enum class Activation { kIdentity, kRelu, kGelu };
enum class ActivationMode { kForward, kGrad };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation kind);

// Scalar forms shared by the dense and sparse elementwise maps.
double activate(Activation kind, double x);
double activate_grad(Activation kind, double x);

// Elementwise activation. In kGrad mode `a` holds pre-activation values and
// the result is the pointwise derivative.
DenseMatrix activation(Activation kind, const DenseMatrix& a, ActivationMode mode);

// Elementwise helpers.
DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix scale(const DenseMatrix& a, double s);
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);
double sum_squares(const DenseMatrix& a);

}  // namespace dmoe

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace closenet {

/// Dense row-major matrix of doubles.
///
/// All products below compute each output row from its own input row with a
/// fixed accumulation order, so a row's result never depends on where it sits
/// in the matrix. Point-permutation equivariance of the network relies on this.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator()(std::size_t r, std::size_t c) noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  void fill(double value);
  void resize(std::size_t rows, std::size_t cols, double fill = 0.0);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix transpose(const Matrix& m);

/// a (n×m) · b (m×p).
Matrix matmul(const Matrix& a, const Matrix& b);
/// x (n×in) · wᵀ where w is (out×in); optional bias of length out.
Matrix linear(const Matrix& x, const Matrix& weight, std::span<const double> bias = {});
/// aᵀ (m×n) · b (n×p), accumulated over rows of a and b in index order.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// out += aᵀ · b.
void accumulate_tn(const Matrix& a, const Matrix& b, Matrix& out);

/// Column-wise concatenation of matrices with equal row counts.
Matrix hconcat(std::span<const Matrix* const> parts);
Matrix slice_cols(const Matrix& m, std::size_t begin, std::size_t count);
Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t count);
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows);

void add_inplace(Matrix& target, const Matrix& other, double scale = 1.0);
double squared_norm(const Matrix& m);
double squared_distance(const Matrix& a, const Matrix& b);

}  // namespace closenet

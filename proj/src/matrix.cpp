// SPDX-License-Identifier: Apache-2.0
#include "close/matrix.hpp"

#include <algorithm>

#include "close/error.hpp"

namespace closenet {
namespace {

// c_row += a_value * b_row over `width` entries. Vectorises across the row;
// every element sees the same operation sequence regardless of alignment.
inline void axpy(double a_value, const double* __restrict b_row, double* __restrict c_row,
                 std::size_t width) {
  for (std::size_t j = 0; j < width; ++j) c_row[j] += a_value * b_row[j];
}

void require(bool ok, const char* what) {
  if (!ok) throw ShapeMismatchError(what);
}

}  // namespace

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Matrix::resize(std::size_t rows, std::size_t cols, double fill) {
  rows_ = rows;
  cols_ = cols;
  data_.assign(rows * cols, fill);
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  }
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const std::size_t n = a.rows(), inner = a.cols(), p = b.cols();
  Matrix c(n, p);
  // 4×32 output tiles held in registers across the inner loop. Every element
  // is accumulated from zero in inner-index order, as in the scalar tail, so
  // a row's values do not depend on which path computed it.
  constexpr std::size_t kRows = 4, kCols = 32;
  std::size_t i = 0;
  for (; i + kRows <= n; i += kRows) {
    const double* a0 = a.row(i).data();
    const double* a1 = a.row(i + 1).data();
    const double* a2 = a.row(i + 2).data();
    const double* a3 = a.row(i + 3).data();
    std::size_t j = 0;
    for (; j + kCols <= p; j += kCols) {
      double acc[kRows][kCols] = {};
      for (std::size_t k = 0; k < inner; ++k) {
        const double* brow = b.data() + k * p + j;
        const double v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
        for (std::size_t t = 0; t < kCols; ++t) {
          const double bt = brow[t];
          acc[0][t] += v0 * bt;
          acc[1][t] += v1 * bt;
          acc[2][t] += v2 * bt;
          acc[3][t] += v3 * bt;
        }
      }
      for (std::size_t r = 0; r < kRows; ++r) std::copy_n(acc[r], kCols, c.row(i + r).data() + j);
    }
    if (j < p) {
      const std::size_t w = p - j;
      for (std::size_t k = 0; k < inner; ++k) {
        const double* brow = b.data() + k * p + j;
        axpy(a0[k], brow, c.row(i).data() + j, w);
        axpy(a1[k], brow, c.row(i + 1).data() + j, w);
        axpy(a2[k], brow, c.row(i + 2).data() + j, w);
        axpy(a3[k], brow, c.row(i + 3).data() + j, w);
      }
    }
  }
  for (; i < n; ++i) {
    double* crow = c.row(i).data();
    for (std::size_t k = 0; k < inner; ++k) axpy(a(i, k), b.row(k).data(), crow, p);
  }
  return c;
}

Matrix linear(const Matrix& x, const Matrix& weight, std::span<const double> bias) {
  require(x.cols() == weight.cols(), "linear: input width does not match weight");
  require(bias.empty() || bias.size() == weight.rows(), "linear: bias length");
  Matrix y = matmul(x, transpose(weight));
  if (!bias.empty()) {
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double* row = y.row(i).data();
      for (std::size_t j = 0; j < y.cols(); ++j) row[j] += bias[j];
    }
  }
  return y;
}

void accumulate_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  require(a.rows() == b.rows(), "matmul_tn: row counts differ");
  require(out.rows() == a.cols() && out.cols() == b.cols(), "matmul_tn: output shape");
  const std::size_t p = b.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* brow = b.row(r).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double av = a(r, i);
      if (av != 0.0) axpy(av, brow, out.row(i).data(), p);
    }
  }
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix out(a.cols(), b.cols());
  accumulate_tn(a, b, out);
  return out;
}

Matrix hconcat(std::span<const Matrix* const> parts) {
  std::size_t rows = 0, cols = 0;
  bool first = true;
  for (const Matrix* m : parts) {
    if (m->cols() == 0) continue;
    if (first) {
      rows = m->rows();
      first = false;
    }
    require(m->rows() == rows, "hconcat: row counts differ");
    cols += m->cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const Matrix* m : parts) {
    if (m->cols() == 0) continue;
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(m->row(r).begin(), m->row(r).end(), out.row(r).begin() + offset);
    }
    offset += m->cols();
  }
  return out;
}

Matrix slice_cols(const Matrix& m, std::size_t begin, std::size_t count) {
  require(begin + count <= m.cols(), "slice_cols: out of range");
  Matrix out(m.rows(), count);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::copy_n(m.row(r).begin() + begin, count, out.row(r).begin());
  }
  return out;
}

Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t count) {
  require(begin + count <= m.rows(), "slice_rows: out of range");
  Matrix out(count, m.cols());
  std::copy_n(m.data() + begin * m.cols(), count * m.cols(), out.data());
  return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < m.rows(), "gather_rows: index out of range");
    std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
  }
  return out;
}

void add_inplace(Matrix& target, const Matrix& other, double scale) {
  require(target.rows() == other.rows() && target.cols() == other.cols(), "add: shapes differ");
  double* t = target.data();
  const double* o = other.data();
  for (std::size_t i = 0; i < target.size(); ++i) t[i] += scale * o[i];
}

double squared_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return s;
}

double squared_distance(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "distance: shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return s;
}

}  // namespace closenet

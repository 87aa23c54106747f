#include "empssl/matrix.hpp"

#include <cmath>

#include "empssl/errors.hpp"

namespace empssl {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Matrix::frobenius_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return std::sqrt(s);
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

Matrix& Matrix::operator+=(const Matrix& other) {
  if (rows_ != other.rows_ || cols_ != other.cols_)
    throw DimensionMismatch("Matrix += shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DimensionMismatch("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c.data() + i * m;
    const double* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

Matrix gram_rows(const Matrix& a) {
  const std::size_t n = a.rows(), k = a.cols();
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a.data() + i * k;
    for (std::size_t j = i; j < n; ++j) {
      const double* aj = a.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * aj[p];
      g(i, j) = s;
      g(j, i) = s;
    }
  }
  return g;
}

Matrix gram_cols(const Matrix& a) {
  const std::size_t n = a.rows(), k = a.cols();
  Matrix g(k, k);
  // accumulate rank-1 updates row by row; keeps inner loops contiguous
  for (std::size_t r = 0; r < n; ++r) {
    const double* ar = a.data() + r * k;
    for (std::size_t i = 0; i < k; ++i) {
      const double ari = ar[i];
      if (ari == 0.0) continue;
      double* gi = g.data() + i * k;
      for (std::size_t j = i; j < k; ++j) gi[j] += ari * ar[j];
    }
  }
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  return g;
}

double frobenius_dot(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionMismatch("frobenius_dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

}  // namespace empssl

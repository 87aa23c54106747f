#pragma once

#include <cstddef>
#include <vector>

namespace empssl {

/// Dense real matrix, row-major, double precision. The loss and gradient
/// paths run on these regardless of the encoder's activation precision.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool all_finite() const;
  double frobenius_norm() const;
  Matrix transposed() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator*=(double s);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// C = A * B. Throws DimensionMismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

/// A * A^T (rows x rows), exploiting symmetry.
Matrix gram_rows(const Matrix& a);

/// A^T * A (cols x cols), exploiting symmetry.
Matrix gram_cols(const Matrix& a);

/// Frobenius inner product <A, B>.
double frobenius_dot(const Matrix& a, const Matrix& b);

}  // namespace empssl

#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "empssl/errors.hpp"
#include "empssl/linalg.hpp"
#include "empssl/rng.hpp"
#include "test_support.hpp"

using empssl::Matrix;
using empssl::Rng;
using test_support::random_matrix;

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

Matrix random_spd(std::size_t n, Rng& rng) {
  Matrix m = random_matrix(n, n, rng);
  Matrix a = empssl::gram_rows(m);
  for (std::size_t i = 0; i < n; ++i) a(i, i) += 1.0;
  return a;
}

}  // namespace

TEST_CASE("cholesky of identity is identity") {
  Matrix i3 = Matrix::identity(3);
  auto f = empssl::cholesky(i3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(f.L(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-15));
}

TEST_CASE("cholesky matches hand elimination on 2x2") {
  Matrix a(2, 2);
  a(0, 0) = 4; a(0, 1) = 2; a(1, 0) = 2; a(1, 1) = 3;
  auto f = empssl::cholesky(a);
  CHECK(f.L(0, 0) == doctest::Approx(2.0));
  CHECK(f.L(0, 1) == doctest::Approx(0.0));
  CHECK(f.L(1, 0) == doctest::Approx(1.0));
  CHECK(f.L(1, 1) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("cholesky reconstruction error stays below 1e-10") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a = random_spd(8, rng);
    auto f = empssl::cholesky(a);
    Matrix rec = empssl::matmul(f.L, f.L.transposed());
    double num = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = rec.data()[i] - a.data()[i];
      num += d * d;
    }
    CHECK(std::sqrt(num) / a.frobenius_norm() <= 1e-10);
  }
}

TEST_CASE("cholesky rejects indefinite and asymmetric inputs") {
  Matrix indef(2, 2);
  indef(0, 0) = 1; indef(0, 1) = 2; indef(1, 0) = 2; indef(1, 1) = 1;
  CHECK_THROWS_AS(empssl::cholesky(indef), empssl::NotPositiveDefinite);

  Matrix asym(2, 2);
  asym(0, 0) = 2; asym(0, 1) = 1; asym(1, 0) = 1.5; asym(1, 1) = 2;
  CHECK_THROWS_AS(empssl::cholesky(asym), empssl::DimensionMismatch);

  Matrix rect(2, 3);
  CHECK_THROWS_AS(empssl::cholesky(rect), empssl::DimensionMismatch);
}

TEST_CASE("cholesky traps NaN contamination") {
  Matrix a = Matrix::identity(3);
  a(1, 1) = std::nan("");
  CHECK_THROWS_AS(empssl::cholesky(a), empssl::NotPositiveDefinite);
}

TEST_CASE("logdet of identity is zero") {
  CHECK(empssl::logdet_psd(Matrix::identity(5)) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("logdet of diag(2,8) is log 16") {
  Matrix a(2, 2);
  a(0, 0) = 2; a(1, 1) = 8;
  CHECK(empssl::logdet_psd(a) == doctest::Approx(std::log(16.0)).epsilon(1e-12));
}

TEST_CASE("logdet matches eigenvalue-sum oracle") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix a = random_spd(10, rng);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(a));
    double expected = 0.0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
      expected += std::log(es.eigenvalues()[i]);
    CHECK(empssl::logdet_psd(a) == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("solve_psd trivial cases") {
  Rng rng(5);
  Matrix b = random_matrix(4, 3, rng);
  Matrix x = empssl::solve_psd(Matrix::identity(4), b);
  for (std::size_t i = 0; i < b.size(); ++i)
    CHECK(x.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-14));

  Matrix two = Matrix::identity(4);
  two *= 2.0;
  Matrix half = empssl::solve_psd(two, Matrix::identity(4));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(half(i, j) == doctest::Approx(i == j ? 0.5 : 0.0).epsilon(1e-14));
}

TEST_CASE("solve_psd residual and recovery accuracy") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix a = random_spd(9, rng);
    Matrix b = random_matrix(9, 4, rng);
    Matrix x = empssl::solve_psd(a, b);
    Matrix ax = empssl::matmul(a, x);
    double num = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double d = ax.data()[i] - b.data()[i];
      num += d * d;
    }
    CHECK(std::sqrt(num) / b.frobenius_norm() <= 1e-9);

    // recover a known solution
    Matrix x0 = random_matrix(9, 4, rng);
    Matrix rhs = empssl::matmul(a, x0);
    Matrix got = empssl::solve_psd(a, rhs);
    double worst = 0.0;
    for (std::size_t i = 0; i < x0.size(); ++i)
      worst = std::max(worst,
                       std::abs(got.data()[i] - x0.data()[i]) /
                           std::max(1.0, std::abs(x0.data()[i])));
    CHECK(worst <= 1e-8);
  }
}

TEST_CASE("solve_psd rejects mismatched shapes") {
  Matrix a = Matrix::identity(4);
  Matrix b(3, 2);
  CHECK_THROWS_AS(empssl::solve_psd(a, b), empssl::DimensionMismatch);
}

TEST_CASE("logdet duality: feature Gram equals batch Gram") {
  Rng rng(47);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t d = 2 + rng.below(10);
    const std::size_t b = 2 + rng.below(20);
    Matrix z = random_matrix(d, b, rng);
    const double alpha = rng.uniform(0.1, 8.0);

    Matrix md = empssl::gram_rows(z);
    md *= alpha;
    for (std::size_t i = 0; i < d; ++i) md(i, i) += 1.0;
    Matrix mb = empssl::gram_cols(z);
    mb *= alpha;
    for (std::size_t i = 0; i < b; ++i) mb(i, i) += 1.0;

    CHECK(std::abs(empssl::logdet_psd(md) - empssl::logdet_psd(mb)) <= 1e-9);
  }
}

TEST_CASE("sym_eigenvalues matches Eigen") {
  Rng rng(59);
  Matrix m = random_matrix(12, 12, rng);
  Matrix a(12, 12);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j) a(i, j) = 0.5 * (m(i, j) + m(j, i));

  auto eig = empssl::sym_eigenvalues(a);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(a));
  REQUIRE(eig.size() == 12);
  for (std::size_t i = 0; i < 12; ++i)
    CHECK(eig[i] == doctest::Approx(es.eigenvalues()[static_cast<Eigen::Index>(i)])
                        .epsilon(1e-10));
}

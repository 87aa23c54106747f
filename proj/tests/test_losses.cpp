#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "empssl/errors.hpp"
#include "empssl/losses.hpp"
#include "empssl/rng.hpp"
#include "test_support.hpp"

using empssl::Matrix;
using empssl::Rng;
using empssl::TcrParams;
using test_support::finite_diff;
using test_support::max_rel_error;
using test_support::random_matrix;
using test_support::random_unit_columns;

TEST_CASE("tcr of the zero matrix is zero") {
  Matrix z(6, 9);
  CHECK(empssl::tcr(z, 0.3) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("tcr analytic 2x2 identity case") {
  // d = b = 2, eps2 = 0.5 -> alpha = 2, R = (1/2) logdet(3 I) = log 3
  Matrix z = Matrix::identity(2);
  CHECK(empssl::tcr(z, 0.5) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("tcr matches the eigenvalue oracle at the paper operating point") {
  Rng rng(101);
  Matrix z = random_unit_columns(512, 100, rng);
  const double eps2 = 0.2;
  const double alpha = 512.0 / (100.0 * eps2);

  Eigen::MatrixXd ze(512, 100);
  for (std::size_t i = 0; i < 512; ++i)
    for (std::size_t j = 0; j < 100; ++j) ze(i, j) = z(i, j);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ze * ze.transpose());
  double expected = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
    expected += 0.5 * std::log1p(alpha * std::max(0.0, es.eigenvalues()[i]));

  CHECK(std::abs(empssl::tcr(z, eps2) - expected) <= 1e-8);
}

TEST_CASE("tcr dual Gram routes agree to 1e-9") {
  Rng rng(103);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 2 + rng.below(14);
    const std::size_t b = 2 + rng.below(14);
    Matrix z = random_matrix(d, b, rng);
    if (trial % 3 == 0) {
      // near rank-deficient: overwrite columns with copies of column 0
      for (std::size_t j = 1; j < b; ++j)
        for (std::size_t i = 0; i < d; ++i)
          z(i, j) = z(i, 0) + 1e-9 * z(i, j);
    }
    const double eps2 = rng.uniform(0.05, 1.0);
    CHECK(std::abs(empssl::tcr_feature_gram(z, eps2) - empssl::tcr_batch_gram(z, eps2)) <=
          1e-9);
  }
}

TEST_CASE("tcr is non-negative and zero only at Z = 0") {
  Rng rng(107);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix z = random_matrix(3 + rng.below(8), 3 + rng.below(8), rng);
    CHECK(empssl::tcr(z, 0.2) > 0.0);
  }
  CHECK(empssl::tcr(Matrix(4, 7), 0.2) == doctest::Approx(0.0));
}

TEST_CASE("collapsing all columns to one strictly lowers tcr") {
  Rng rng(109);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix z = random_unit_columns(8, 12, rng);
    Matrix collapsed(8, 12);
    for (std::size_t j = 0; j < 12; ++j)
      for (std::size_t i = 0; i < 8; ++i) collapsed(i, j) = z(i, 0);
    CHECK(empssl::tcr(collapsed, 0.2) < empssl::tcr(z, 0.2));
  }
}

TEST_CASE("tcr rejects non-finite input") {
  Matrix z(2, 2);
  z(0, 0) = std::nan("");
  CHECK_THROWS_AS(empssl::tcr(z, 0.2), empssl::NotPositiveDefinite);
}

TEST_CASE("tcr_grad trivial cases") {
  Matrix zero(5, 3);
  Matrix g = empssl::tcr_grad(zero, 0.7);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.data()[i] == 0.0);

  // scalar case: R = (1/2) log(1 + z^2), dR/dz = z / (1 + z^2) = 0.5 at z = 1
  Matrix one(1, 1);
  one(0, 0) = 1.0;
  CHECK(empssl::tcr_grad(one, 1.0)(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("tcr_grad matches central finite differences") {
  Rng rng(113);
  const double eps2 = 0.2;
  for (auto [d, b] : {std::pair<std::size_t, std::size_t>{8, 16}, {16, 8}, {5, 5}}) {
    Matrix z = random_matrix(d, b, rng);
    Matrix analytic = empssl::tcr_grad(z, eps2);
    Matrix fd = finite_diff([&](const Matrix& m) { return empssl::tcr(m, eps2); }, z);
    CHECK(max_rel_error(analytic, fd) <= 1e-6);
  }
}

TEST_CASE("invariance extremes") {
  Rng rng(127);
  Matrix z = random_unit_columns(4, 6, rng);
  std::vector<Matrix> same{z, z};
  CHECK(empssl::invariance(same) == doctest::Approx(6.0).epsilon(1e-12));

  Matrix neg = z;
  neg *= -1.0;
  std::vector<Matrix> opposite{z, neg};
  CHECK(empssl::invariance(opposite) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("invariance equals direct summation oracle") {
  Rng rng(131);
  std::vector<Matrix> zs;
  for (int i = 0; i < 3; ++i) zs.push_back(random_unit_columns(4, 5, rng));

  // brute force (1/n) sum_i Tr(Z_i^T Zbar)
  Matrix zbar(4, 5);
  for (const auto& z : zs) zbar += z;
  zbar *= 1.0 / 3.0;
  double expected = 0.0;
  for (const auto& z : zs) {
    double tr = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) tr += z(i, j) * zbar(i, j);
    expected += tr;
  }
  expected /= 3.0;

  CHECK(std::abs(empssl::invariance(zs) - expected) <= 1e-12);
}

TEST_CASE("invariance_grad closed forms and finite differences") {
  Rng rng(137);
  Matrix z = random_unit_columns(3, 4, rng);
  std::vector<Matrix> same{z, z, z};
  auto grads = empssl::invariance_grad(same);
  REQUIRE(grads.size() == 3);
  for (const auto& g : grads)
    for (std::size_t i = 0; i < g.size(); ++i)
      CHECK(g.data()[i] == doctest::Approx(2.0 / 3.0 * z.data()[i]).epsilon(1e-12));

  Matrix neg = z;
  neg *= -1.0;
  for (const auto& g : empssl::invariance_grad({z, neg}))
    for (std::size_t i = 0; i < g.size(); ++i)
      CHECK(g.data()[i] == doctest::Approx(0.0).epsilon(1e-12));

  // finite differences on a random instance, perturbing each patch in turn
  std::vector<Matrix> zs;
  for (int i = 0; i < 3; ++i) zs.push_back(random_matrix(4, 5, rng));
  auto analytic = empssl::invariance_grad(zs);
  for (std::size_t j = 0; j < zs.size(); ++j) {
    Matrix fd = finite_diff(
        [&](const Matrix& m) {
          auto copy = zs;
          copy[j] = m;
          return empssl::invariance(copy);
        },
        zs[j]);
    CHECK(max_rel_error(analytic[j], fd) <= 1e-8);
  }
}

TEST_CASE("invariance rejects bad inputs") {
  Rng rng(139);
  Matrix z = random_matrix(3, 4, rng);
  CHECK_THROWS_AS(empssl::invariance({z}), empssl::ShapeMismatch);
  Matrix other = random_matrix(3, 5, rng);
  CHECK_THROWS_AS(empssl::invariance({z, other}), empssl::ShapeMismatch);
}

TEST_CASE("emp_objective trivial and compositional cases") {
  std::vector<Matrix> zeros{Matrix(4, 6), Matrix(4, 6)};
  auto obj = empssl::emp_objective(zeros, {0.2, 0.0});
  CHECK(obj.loss == doctest::Approx(0.0));
  for (const auto& g : obj.grads)
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.data()[i] == 0.0);

  Rng rng(149);
  std::vector<Matrix> zs;
  for (int i = 0; i < 4; ++i) zs.push_back(random_unit_columns(6, 10, rng));
  TcrParams p{0.2, 200.0};
  auto full = empssl::emp_objective(zs, p);
  double mean_tcr = 0.0;
  for (const auto& z : zs) mean_tcr += empssl::tcr(z, p.eps2);
  mean_tcr /= static_cast<double>(zs.size());
  const double expected = -mean_tcr - p.lambda * empssl::invariance(zs);
  CHECK(std::abs(full.loss - expected) <= 1e-10);
  CHECK(full.tcr_term == doctest::Approx(mean_tcr).epsilon(1e-12));
}

TEST_CASE("emp_objective gradient matches finite differences") {
  Rng rng(151);
  std::vector<Matrix> zs;
  for (int i = 0; i < 3; ++i) zs.push_back(random_matrix(5, 7, rng));
  TcrParams p{0.2, 2.0};
  auto obj = empssl::emp_objective(zs, p);
  for (std::size_t j = 0; j < zs.size(); ++j) {
    Matrix fd = finite_diff(
        [&](const Matrix& m) {
          auto copy = zs;
          copy[j] = m;
          return empssl::emp_objective(copy, p).loss;
        },
        zs[j]);
    CHECK(max_rel_error(obj.grads[j], fd) <= 1e-6);
  }
}

TEST_CASE("batch column permutation leaves the loss unchanged and permutes grads") {
  Rng rng(157);
  std::vector<Matrix> zs;
  for (int i = 0; i < 3; ++i) zs.push_back(random_unit_columns(5, 8, rng));
  TcrParams p{0.2, 3.0};
  auto base = empssl::emp_objective(zs, p);

  std::vector<std::size_t> perm(8);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 7; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);

  std::vector<Matrix> permuted;
  for (const auto& z : zs) {
    Matrix q(5, 8);
    for (std::size_t j = 0; j < 8; ++j)
      for (std::size_t i = 0; i < 5; ++i) q(i, j) = z(i, perm[j]);
    permuted.push_back(q);
  }
  auto shuffled = empssl::emp_objective(permuted, p);
  CHECK(shuffled.loss == doctest::Approx(base.loss).epsilon(1e-9));
  for (std::size_t m = 0; m < zs.size(); ++m)
    for (std::size_t j = 0; j < 8; ++j)
      for (std::size_t i = 0; i < 5; ++i)
        CHECK(shuffled.grads[m](i, j) ==
              doctest::Approx(base.grads[m](i, perm[j])).epsilon(1e-9));
}

TEST_CASE("tcr_weight isolates the invariance term") {
  Rng rng(163);
  std::vector<Matrix> zs{random_unit_columns(4, 6, rng), random_unit_columns(4, 6, rng)};
  TcrParams p{0.2, 5.0};
  auto obj = empssl::emp_objective(zs, p, 0.0);
  CHECK(obj.loss == doctest::Approx(-5.0 * empssl::invariance(zs)).epsilon(1e-12));
}

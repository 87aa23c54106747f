#include "empssl/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "empssl/errors.hpp"

namespace empssl {

namespace {

Matrix symmetrized(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionMismatch("cholesky: matrix not square");
  const std::size_t n = a.rows();
  double max_abs = 0.0, max_asym = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      max_abs = std::max(max_abs, std::abs(a(i, j)));
      max_asym = std::max(max_asym, std::abs(a(i, j) - a(j, i)));
    }
  }
  if (max_asym > 1e-10 * std::max(1.0, max_abs))
    throw DimensionMismatch("cholesky: input exceeds 1e-10 relative asymmetry");
  Matrix s(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s(i, j) = 0.5 * (a(i, j) + a(j, i));
  return s;
}

}  // namespace

CholeskyFactor cholesky(const Matrix& a) {
  Matrix s = symmetrized(a);
  const std::size_t n = s.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = s(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0))  // negated comparison also rejects NaN
      throw NotPositiveDefinite("cholesky: pivot <= 0 at column " + std::to_string(j));
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = s(i, j);
      const double* li = l.data() + i * n;
      const double* lj = l.data() + j * n;
      for (std::size_t k = 0; k < j; ++k) v -= li[k] * lj[k];
      l(i, j) = v / ljj;
    }
  }
  return {std::move(l)};
}

double logdet_psd(const Matrix& a) {
  CholeskyFactor f = cholesky(a);
  double s = 0.0;
  for (std::size_t i = 0; i < f.L.rows(); ++i) s += std::log(f.L(i, i));
  return 2.0 * s;
}

Matrix solve_psd(const Matrix& a, const Matrix& b) {
  if (b.rows() != a.rows()) throw DimensionMismatch("solve_psd: B row count != A order");
  CholeskyFactor f = cholesky(a);
  const Matrix& l = f.L;
  const std::size_t n = l.rows(), m = b.cols();

  // L Y = B (forward), then L^T X = Y (backward), per column.
  Matrix x = b;
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      double v = x(i, j);
      for (std::size_t k = 0; k < i; ++k) v -= l(i, k) * x(k, j);
      x(i, j) = v / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double v = x(ii, j);
      for (std::size_t k = ii + 1; k < n; ++k) v -= l(k, ii) * x(k, j);
      x(ii, j) = v / l(ii, ii);
    }
  }
  return x;
}

std::vector<double> sym_eigenvalues(const Matrix& a) {
  Matrix s = symmetrized(a);
  const std::size_t n = s.rows();
  if (n == 0) return {};

  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::abs(s(i, j)));
  const double tol = 1e-14 * std::max(scale, 1e-300);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off = std::max(off, std::abs(s(p, q)));
    if (off <= tol) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = s(p, q);
        if (std::abs(apq) <= tol) continue;
        const double theta = (s(q, q) - s(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double skp = s(k, p), skq = s(k, q);
          s(k, p) = c * skp - sn * skq;
          s(k, q) = sn * skp + c * skq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double spk = s(p, k), sqk = s(q, k);
          s(p, k) = c * spk - sn * sqk;
          s(q, k) = sn * spk + c * sqk;
        }
      }
    }
  }

  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = s(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

}  // namespace empssl

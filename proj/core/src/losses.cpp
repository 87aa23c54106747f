#include "empssl/losses.hpp"

#include <cmath>
#include <string>

#include "empssl/errors.hpp"
#include "empssl/linalg.hpp"
#include "empssl/threading.hpp"

namespace empssl {

namespace {

double distortion_scale(const Matrix& z, double eps2) {
  if (z.rows() == 0 || z.cols() == 0)
    throw DimensionMismatch("tcr: empty projection matrix");
  if (!(eps2 > 0.0)) throw DimensionMismatch("tcr: eps2 must be > 0");
  if (!z.all_finite())
    throw NotPositiveDefinite("tcr: projection matrix contains non-finite entries");
  return static_cast<double>(z.rows()) / (static_cast<double>(z.cols()) * eps2);
}

Matrix scaled_gram_plus_identity(const Matrix& g, double alpha) {
  Matrix m = g;
  m *= alpha;
  for (std::size_t i = 0; i < m.rows(); ++i) m(i, i) += 1.0;
  return m;
}

void check_same_shapes(const std::vector<ProjectionMatrix>& zs) {
  if (zs.size() < 2) throw ShapeMismatch("invariance: need at least 2 patch projections");
  for (const auto& z : zs) {
    if (z.rows() != zs.front().rows() || z.cols() != zs.front().cols())
      throw ShapeMismatch("invariance: patch projections differ in shape");
  }
}

}  // namespace

double tcr_feature_gram(const ProjectionMatrix& z, double eps2) {
  const double alpha = distortion_scale(z, eps2);
  return 0.5 * logdet_psd(scaled_gram_plus_identity(gram_rows(z), alpha));
}

double tcr_batch_gram(const ProjectionMatrix& z, double eps2) {
  const double alpha = distortion_scale(z, eps2);
  return 0.5 * logdet_psd(scaled_gram_plus_identity(gram_cols(z), alpha));
}

double tcr(const ProjectionMatrix& z, double eps2) {
  return z.rows() <= z.cols() ? tcr_feature_gram(z, eps2) : tcr_batch_gram(z, eps2);
}

Matrix tcr_grad(const ProjectionMatrix& z, double eps2) {
  const double alpha = distortion_scale(z, eps2);
  Matrix g;
  if (z.rows() <= z.cols()) {
    // a (I_d + a Z Z^T)^{-1} Z
    Matrix m = scaled_gram_plus_identity(gram_rows(z), alpha);
    g = solve_psd(m, z);
  } else {
    // a Z (I_b + a Z^T Z)^{-1}, solved through the transpose
    Matrix m = scaled_gram_plus_identity(gram_cols(z), alpha);
    g = solve_psd(m, z.transposed()).transposed();
  }
  g *= alpha;
  return g;
}

Matrix patch_mean(const std::vector<ProjectionMatrix>& zs) {
  check_same_shapes(zs);
  Matrix mean(zs.front().rows(), zs.front().cols());
  for (const auto& z : zs) mean += z;
  mean *= 1.0 / static_cast<double>(zs.size());
  return mean;
}

double invariance(const std::vector<ProjectionMatrix>& zs) {
  Matrix mean = patch_mean(zs);
  return frobenius_dot(mean, mean);
}

std::vector<Matrix> invariance_grad(const std::vector<ProjectionMatrix>& zs) {
  Matrix g = patch_mean(zs);
  g *= 2.0 / static_cast<double>(zs.size());
  return std::vector<Matrix>(zs.size(), g);
}

EmpObjective emp_objective(const std::vector<ProjectionMatrix>& zs, const TcrParams& p,
                           double tcr_weight) {
  check_same_shapes(zs);
  const std::size_t n = zs.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  // Per-patch coding-rate terms and gradients in parallel; the reduction
  // below runs in fixed patch order so results are thread-count independent.
  std::vector<double> rates(n);
  std::vector<Matrix> rate_grads(n);
  parallel_for(n, [&](std::size_t i) {
    rates[i] = tcr(zs[i], p.eps2);
    rate_grads[i] = tcr_grad(zs[i], p.eps2);
  });

  EmpObjective out;
  double rate_sum = 0.0;
  for (double r : rates) rate_sum += r;
  out.tcr_term = rate_sum * inv_n;

  Matrix mean = patch_mean(zs);
  out.invariance_term = frobenius_dot(mean, mean);
  out.loss = -tcr_weight * out.tcr_term - p.lambda * out.invariance_term;

  Matrix mean_grad = mean;  // lambda * (2/n) Zbar, shared by every patch
  mean_grad *= p.lambda * 2.0 * inv_n;

  out.grads.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Matrix g = std::move(rate_grads[i]);
    g *= -tcr_weight * inv_n;
    for (std::size_t k = 0; k < g.size(); ++k) g.data()[k] -= mean_grad.data()[k];
    out.grads[i] = std::move(g);
  }
  return out;
}

}  // namespace empssl

#pragma once

#include <vector>

#include "empssl/matrix.hpp"

namespace empssl {

/// Projection matrix convention: d rows (projection dim) x b columns (batch).
/// Columns coming out of the encoder are L2-normalized; the loss functions
/// themselves only require finite entries so they stay differentiable for
/// gradient checking.
using ProjectionMatrix = Matrix;

struct TcrParams {
  double eps2 = 0.2;     // squared distortion, must be > 0
  double lambda = 200.0; // invariance weight, >= 0
};

/// Total coding rate of Z: (1/2) logdet(I + (d/(b*eps2)) Z Z^T).
/// Computed through whichever dual Gram matrix (d x d or b x b) is smaller;
/// the two routes agree by the determinant identity
/// det(I_d + a Z Z^T) = det(I_b + a Z^T Z). Always >= 0.
double tcr(const ProjectionMatrix& z, double eps2);

/// Diagnostic entry points pinning the Gram side; tcr() picks the cheaper.
double tcr_feature_gram(const ProjectionMatrix& z, double eps2);  // d x d route
double tcr_batch_gram(const ProjectionMatrix& z, double eps2);    // b x b route

/// Gradient of tcr with respect to Z: a (I + a Z Z^T)^{-1} Z, a = d/(b*eps2).
/// This is the ascent direction for the coding rate.
Matrix tcr_grad(const ProjectionMatrix& z, double eps2);

/// Mean trace alignment between each patch projection and the patch mean:
/// (1/n) sum_i Tr(Z_i^T Zbar), Zbar = (1/n) sum_k Z_k. Equals ||Zbar||_F^2,
/// which lies in [0, b] when all columns are unit norm.
double invariance(const std::vector<ProjectionMatrix>& zs);

/// Gradient of invariance() with respect to each Z_j. The mean is not
/// detached, so every entry equals (2/n) Zbar.
std::vector<Matrix> invariance_grad(const std::vector<ProjectionMatrix>& zs);

/// Column-wise mean of the patch projections.
Matrix patch_mean(const std::vector<ProjectionMatrix>& zs);

struct EmpObjective {
  double loss = 0.0;              // -tcr_weight * mean_i tcr(Z_i) - lambda * invariance
  double tcr_term = 0.0;          // mean_i tcr(Z_i)
  double invariance_term = 0.0;   // ||Zbar||_F^2
  std::vector<Matrix> grads;      // d(loss)/d(Z_i)
};

/// The combined objective in minimization form. Decreasing the returned loss
/// increases the coding-rate + invariance objective. tcr_weight scales the
/// coding-rate term only (1.0 for the standard objective; 0.0 isolates the
/// invariance term for collapse diagnostics).
EmpObjective emp_objective(const std::vector<ProjectionMatrix>& zs, const TcrParams& p,
                           double tcr_weight = 1.0);

}  // namespace empssl

#pragma once

#include <vector>

#include "empssl/matrix.hpp"

namespace empssl {

struct CholeskyFactor {
  Matrix L;  // lower triangular, strictly positive diagonal
};

/// Cholesky factorization of a symmetric positive-definite matrix.
/// The input is validated to be symmetric within 1e-10 relative asymmetry and
/// then symmetrized as (A + A^T)/2 before elimination, absorbing
/// floating-point asymmetry from upstream Gram products.
/// Throws NotPositiveDefinite if any pivot fails to be > 0 (this also traps
/// NaN contamination), DimensionMismatch if A is not square.
CholeskyFactor cholesky(const Matrix& a);

/// log(det(A)) for symmetric positive-definite A, via 2 * sum(log(diag(L))).
double logdet_psd(const Matrix& a);

/// Solves A X = B for symmetric positive-definite A.
/// Relative residual ||AX - B|| / ||B|| <= 1e-9 for well-conditioned inputs.
Matrix solve_psd(const Matrix& a, const Matrix& b);

/// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending order.
/// Used by the effective-rank diagnostic; deterministic sweep order.
std::vector<double> sym_eigenvalues(const Matrix& a);

}  // namespace empssl

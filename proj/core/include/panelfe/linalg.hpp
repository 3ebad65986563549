#pragma once

#include <Eigen/Dense>

namespace panelfe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Relative floor below which singular values count as exact zeros for
// rank decisions.
inline constexpr double kRankFloor = 1e-12;

// Thin SVD factors m = u * diag(s) * v', with s nonincreasing and
// u, v having orthonormal columns (min(N,T) of them).
struct SvdFactors {
  Matrix u;
  Vector s;
  Matrix v;

  Matrix reconstruct() const { return u * s.asDiagonal() * v.transpose(); }
};

// Thin SVD. Throws DataError("invalid matrix") on non-finite entries.
SvdFactors svd(const Matrix& m);

// Singular values only (nonincreasing).
Vector singular_values(const Matrix& m);

// Best Frobenius-norm approximation of m with rank <= r.
// Throws DataError("rank too large") if r > min(N,T).
Matrix truncate_rank(const Matrix& m, Index r);

struct SoftThresholdResult {
  Matrix pi;     // U * diag(max(s_j - mu, 0)) * V'
  Matrix omega;  // m - pi; singular values min(s_j, mu)
};

// Proximal map of mu * ||.||_* : pi minimizes ||m - P||_F^2/2 + mu ||P||_*.
// Throws DataError("negative threshold") if mu < 0.
SoftThresholdResult soft_threshold_svd(const Matrix& m, double mu);

double spectral_norm(const Matrix& m);
double nuclear_norm(const Matrix& m);

// Entry-wise inner product sum_it a_it * b_it.
// Throws DataError("dimension error") on shape mismatch.
double frobenius_inner(const Matrix& a, const Matrix& b);

// Number of singular values above kRankFloor * s_1.
Index effective_rank(const Vector& s);

}  // namespace panelfe

#include "panelfe/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "panelfe/errors.hpp"

namespace panelfe {

namespace {

void require_finite(const Matrix& m) {
  if (!m.allFinite()) {
    throw DataError("invalid matrix");
  }
}

}  // namespace

SvdFactors svd(const Matrix& m) {
  require_finite(m);
  Eigen::BDCSVD<Matrix> solver(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return SvdFactors{solver.matrixU(), solver.singularValues(), solver.matrixV()};
}

Vector singular_values(const Matrix& m) {
  require_finite(m);
  Eigen::BDCSVD<Matrix> solver(m);
  return solver.singularValues();
}

Matrix truncate_rank(const Matrix& m, Index r) {
  require_finite(m);
  const Index k = std::min(m.rows(), m.cols());
  if (r > k) {
    throw DataError("rank too large");
  }
  if (r == 0) {
    return Matrix::Zero(m.rows(), m.cols());
  }
  if (r == k) {
    return m;
  }
  // For small r the dominant subspace comes cheaper from the Gram matrix on
  // the short side; m * V_r * V_r' equals U_r S_r V_r' exactly.
  if (4 * r < k) {
    if (m.cols() <= m.rows()) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(m.transpose() * m);
      const Matrix v = es.eigenvectors().rightCols(r);
      return (m * v) * v.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(m * m.transpose());
    const Matrix u = es.eigenvectors().rightCols(r);
    return u * (u.transpose() * m);
  }
  const SvdFactors f = svd(m);
  return f.u.leftCols(r) * f.s.head(r).asDiagonal() * f.v.leftCols(r).transpose();
}

SoftThresholdResult soft_threshold_svd(const Matrix& m, double mu) {
  if (mu < 0) {
    throw DataError("negative threshold");
  }
  const SvdFactors f = svd(m);
  Vector shrunk = (f.s.array() - mu).max(0.0);
  Matrix pi = f.u * shrunk.asDiagonal() * f.v.transpose();
  return SoftThresholdResult{pi, m - pi};
}

double spectral_norm(const Matrix& m) {
  const Vector s = singular_values(m);
  return s.size() > 0 ? s(0) : 0.0;
}

double nuclear_norm(const Matrix& m) { return singular_values(m).sum(); }

double frobenius_inner(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DataError("dimension error");
  }
  return a.cwiseProduct(b).sum();
}

Index effective_rank(const Vector& s) {
  if (s.size() == 0 || s(0) <= 0) {
    return 0;
  }
  const double floor = kRankFloor * s(0);
  Index rank = 0;
  while (rank < s.size() && s(rank) > floor) {
    ++rank;
  }
  return rank;
}

}  // namespace panelfe

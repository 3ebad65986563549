#pragma once

#include <optional>
#include <vector>

#include "panelfe/linalg.hpp"

namespace panelfe {

// Sentinel recorded in WeightMatrix::mu when the weights did not come from
// the regularization path (direct convex solve).
inline constexpr double kDirectMu = -1.0;

// Linear-estimator weight matrix with its diagnostics. Satisfies
// <A, X>_F = 1 and <A, Z_k>_F = 0 for the design it was built from.
struct WeightMatrix {
  Matrix a;
  double s1 = 0.0;      // largest singular value of a
  double fro_sq = 0.0;  // squared Frobenius norm of a
  double lind = 0.0;    // max a_it^2 / sum a_it^2
  double mu = kDirectMu;
  bool lind_cap_violated = false;
};

// One point of the mu-indexed partialling-out path.
struct WeightPathPoint {
  double mu = 0.0;
  Vector psi;                   // control coefficients at this mu
  double pi_nuclear = 0.0;      // ||Pi*_mu||_*
  double omega_x_inner = 0.0;   // <Omega*_mu, X>_F
  double bbar = 0.0;            // <Omega, Pi> / <Omega, X>
  double var_factor = 0.0;      // ||Omega||_F^2 / <Omega, X>^2
  double s1_a = 0.0;            // s_1 of the implied weight matrix
  double lind = 0.0;            // NaN unless path diagnostics were requested
  double objective = 0.0;       // b^2 s1_a^2 + var_factor
};

struct PartialOutOptions {
  int max_iter = 2000;
  double tol = 1e-12;  // relative objective change
};

struct PartialOutResult {
  Matrix pi;
  Vector psi;
  Matrix omega;  // x - z.psi - pi
};

// Nuclear-norm regularized regression of x on the controls and a low-rank
// component: min ||x - z.psi - Pi||_F^2 / 2 + mu ||Pi||_*. With no controls
// this is a single singular-value soft-thresholding; otherwise block
// coordinate descent on the jointly convex objective.
PartialOutResult partial_out_nuclear(const Matrix& x,
                                     const std::vector<Matrix>& z, double mu,
                                     const PartialOutOptions& opts = {});

// Weight matrix for a fixed mu: a = omega / <omega, x>.
WeightMatrix weights_for_mu(const Matrix& x, const std::vector<Matrix>& z,
                            double mu, const PartialOutOptions& opts = {});

enum class WeightCriterion {
  kMse,       // b^2 s_1(A)^2 + ||A||_F^2
  kCiLength,  // b s_1(A) + z_{1-alpha} ||A||_F
};

struct SelectWeightsOptions {
  WeightCriterion criterion = WeightCriterion::kMse;
  double alpha = 0.05;    // only for the CI-length criterion
  int grid_infill = 30;   // geometric points inserted per singular-value gap
  double refine_tol = 1e-6;
  std::optional<double> lind_cap;  // diagnose-and-warn, never enforced
  bool path_diagnostics = false;   // fill per-point Lindeberg ratios
  PartialOutOptions solve;
};

struct WeightSelection {
  WeightMatrix weights;
  std::vector<WeightPathPoint> path;  // mu ascending
  double criterion_value = 0.0;
};

// Minimizes the requested criterion over the mu path: candidate grid at the
// distinct singular values of the control-partialled x plus geometric
// infill, then golden-section refinement inside the best bracket.
WeightSelection select_weights(const Matrix& x, const std::vector<Matrix>& z,
                               double b, const SelectWeightsOptions& opts = {});

// Lindeberg ratio max a_it^2 / sum a_it^2.
double lindeberg(const Matrix& a);

struct OracleOptions {
  int iterations = 20000;
  double step_scale = 1.0;
};

// Reference solver for small instances (NT <= 100): projected subgradient
// descent on b^2 s_1(A)^2 + ||A||_F^2 over the affine constraint set, with
// best-iterate tracking. The optional Lindeberg cap is enforced by a
// clip-and-renormalize heuristic and is meant for test comparisons only.
WeightMatrix oracle_weights_small(const Matrix& x, const std::vector<Matrix>& z,
                                  double b,
                                  std::optional<double> lind_cap = std::nullopt,
                                  const OracleOptions& opts = {});

}  // namespace panelfe

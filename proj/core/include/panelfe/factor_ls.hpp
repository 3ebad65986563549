#pragma once

#include <cstdint>
#include <vector>

#include "panelfe/panel_data.hpp"

namespace panelfe {

struct LsOptions {
  int max_iter = 1000;
  double tol = 1e-10;          // relative objective decrease
  int n_random_starts = 4;     // in addition to the zero-factor start
  std::uint64_t seed = 0x9d2c5680u;
};

// Joint least squares over (beta, delta) and a rank-<=R factor matrix.
struct LsFit {
  double beta = 0.0;
  Vector delta;            // length K
  Matrix gamma;            // N x T, rank <= R
  Matrix residuals;        // Y - X beta - Z.delta - gamma
  double objective = 0.0;  // squared Frobenius norm of residuals
  std::vector<double> objective_trace;  // winning start, one entry per iteration
  int n_iterations = 0;
  bool converged = false;
  int n_starts_used = 0;
};

// Alternating minimization: exact OLS update of the coefficients given the
// factor matrix, exact rank-R truncation of Y - X beta - Z.delta given the
// coefficients. Multistart with a zero-factor start plus n_random_starts
// randomized starts; the lowest objective wins, ties by start index. The
// returned fit always ends on a factor update, so gamma is the exact rank-R
// minimizer at the returned coefficients.
LsFit ls_interactive_fe(const PanelData& panel, Index r,
                        const LsOptions& opts = {});

// Influence weights of the beta coordinate in the coefficient update: the
// first row of (W'W)^{-1} W' reshaped N x T, where W stacks vec(X) and the
// vec(Z_k). Used for the plug-in LS standard error.
Matrix ls_beta_weights(const PanelData& panel);

}  // namespace panelfe

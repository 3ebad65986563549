#pragma once

#include <optional>
#include <utility>

#include "panelfe/factor_ls.hpp"
#include "panelfe/minimax_weights.hpp"
#include "panelfe/panel_data.hpp"

namespace panelfe {

using Interval = std::pair<double, double>;

// Residuals used in the plug-in standard error: the preliminary-step
// residuals (default) or the joint least-squares residuals.
enum class SeResiduals { kPre, kLs };

struct DebiasOptions {
  double alpha = 0.05;
  double epsilon = 0.0;  // slack in the nuclear-norm bound multiplier (4 + epsilon)
  std::optional<double> b_override;
  WeightCriterion criterion = WeightCriterion::kMse;
  std::optional<double> lind_cap;
  SeResiduals se_residuals = SeResiduals::kPre;
  LsOptions ls;
  PartialOutOptions weight_solve;
};

struct DebiasDiagnostics {
  double lind = 0.0;
  double mu_star = 0.0;
  double c_over_sigma_proxy = 0.0;  // c_hat / rms(U_pre)
};

// Full output of the debiasing pipeline.
struct DebiasFit {
  double beta_pre = 0.0;
  Vector delta_pre;     // length K
  Matrix gamma_pre;     // rank <= R
  Matrix u_pre;         // Y - X beta_pre - Z.delta_pre - gamma_pre
  WeightMatrix weights; // selected for target X at b_used
  double beta = 0.0;
  double c_hat = 0.0;
  double epsilon = 0.0;
  double worst_case_bias = 0.0;
  double se = 0.0;
  double alpha = 0.0;
  Interval ci{0.0, 0.0};
  double b_used = 0.0;
  LsFit ls_fit;
  DebiasDiagnostics diagnostics;
};

// <A, y_tilde>_F.
double augmented_linear(const WeightMatrix& a, const Matrix& y_tilde);

// c * s_1(A); the supremum of the bias over the nuclear-norm ball of
// radius c, finite only under the weight constraints.
double worst_case_bias(double c, const WeightMatrix& a);

// Variant that verifies the linear constraints against the design first;
// throws NumericError("unbounded worst-case bias") when they fail.
double worst_case_bias(double c, const WeightMatrix& a, const Matrix& x,
                       const std::vector<Matrix>& z);

// sqrt(sum_it A_it^2 u_it^2): heteroskedasticity-robust plug-in.
double robust_se(const WeightMatrix& a, const Matrix& u_hat);

// beta +/- (bias + z_{1-alpha/2} se).
Interval bias_aware_ci(double beta, double bias, double se, double alpha);

// 1-alpha quantile of |N(t,1)|, by bisection on the folded-normal CDF.
double folded_normal_cv(double t, double alpha);

// beta +/- cv_alpha(bias/se) * se; valid when the bias term is non-random.
// Falls back to beta +/- bias when se = 0.
Interval fixed_bias_ci(double beta, double bias, double se, double alpha);

// The full pipeline: joint LS fit, minimax-weight preliminary estimates,
// rank-R re-truncation, debiased point estimate, nuclear-norm bound
// c_hat = (4 + epsilon) R s_1(U_pre), and the bias-aware CI.
DebiasFit debiased_fit(const PanelData& panel, Index r,
                       const DebiasOptions& opts = {});

// A-priori-bound variant: no preliminary factor estimate (gamma_pre = 0),
// c_hat supplied by the user, b defaulting to c_known / sigma_hat with
// sigma_hat the pooled-OLS residual standard deviation, and the shorter
// fixed-bias CI reported.
DebiasFit known_bound_fit(const PanelData& panel, double c_known,
                          const DebiasOptions& opts = {});

}  // namespace panelfe

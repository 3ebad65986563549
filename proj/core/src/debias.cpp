#include "panelfe/debias.hpp"

#include <algorithm>
#include <cmath>

#include "panelfe/errors.hpp"
#include "panelfe/normal.hpp"

namespace panelfe {

double augmented_linear(const WeightMatrix& a, const Matrix& y_tilde) {
  return frobenius_inner(a.a, y_tilde);
}

double worst_case_bias(double c, const WeightMatrix& a) {
  if (c < 0) {
    throw DataError("negative bias bound");
  }
  return c * a.s1;
}

double worst_case_bias(double c, const WeightMatrix& a, const Matrix& x,
                       const std::vector<Matrix>& z) {
  const double scale = a.a.norm() * x.norm();
  if (std::abs(frobenius_inner(a.a, x) - 1.0) > 1e-6 * std::max(1.0, scale)) {
    throw NumericError("unbounded worst-case bias");
  }
  for (const auto& zk : z) {
    if (std::abs(frobenius_inner(a.a, zk)) > 1e-6 * a.a.norm() * zk.norm()) {
      throw NumericError("unbounded worst-case bias");
    }
  }
  return worst_case_bias(c, a);
}

double robust_se(const WeightMatrix& a, const Matrix& u_hat) {
  if (a.a.rows() != u_hat.rows() || a.a.cols() != u_hat.cols()) {
    throw DataError("dimension error");
  }
  return std::sqrt(a.a.array().square().cwiseProduct(u_hat.array().square())
                       .sum());
}

Interval bias_aware_ci(double beta, double bias, double se, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw DataError("alpha outside (0,1)");
  }
  if (bias < 0 || se < 0) {
    throw DataError("negative bias or standard error");
  }
  const double w = bias + normal_quantile(1.0 - alpha / 2.0) * se;
  return {beta - w, beta + w};
}

double folded_normal_cv(double t, double alpha) {
  if (t < 0) {
    throw DataError("negative noncentrality");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw DataError("alpha outside (0,1)");
  }
  auto coverage = [&](double c) {
    return normal_cdf(c - t) - normal_cdf(-c - t);
  };
  double lo = normal_quantile(1.0 - alpha);
  double hi = t + normal_quantile(1.0 - alpha / 2.0) + 1.0;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (coverage(mid) < 1.0 - alpha) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

Interval fixed_bias_ci(double beta, double bias, double se, double alpha) {
  if (bias < 0 || se < 0) {
    throw DataError("negative bias or standard error");
  }
  if (se == 0.0) {
    // Degenerate noise: report the pure bias interval.
    return {beta - bias, beta + bias};
  }
  const double w = folded_normal_cv(bias / se, alpha) * se;
  return {beta - w, beta + w};
}

namespace {

std::vector<Matrix> switched_controls(const PanelData& panel, Index j) {
  std::vector<Matrix> controls;
  controls.reserve(panel.z.size());
  controls.push_back(panel.x);
  for (Index m = 0; m < panel.n_controls(); ++m) {
    if (m != j) {
      controls.push_back(panel.z[m]);
    }
  }
  return controls;
}

Matrix apply_coefs(const PanelData& panel, double beta, const Vector& delta) {
  Matrix out = beta * panel.x;
  for (Index j = 0; j < panel.n_controls(); ++j) {
    out += delta(j) * panel.z[j];
  }
  return out;
}

// Preliminary coefficient step shared by both pipelines: the target
// coefficient uses the supplied weights; each control coefficient is
// estimated the same way with the roles of X and Z_j switched.
Vector preliminary_deltas(const PanelData& panel, const Matrix& y_tilde,
                          double b, const DebiasOptions& opts) {
  const Index k = panel.n_controls();
  Vector delta(k);
  SelectWeightsOptions wopts;
  wopts.criterion = opts.criterion;
  wopts.alpha = opts.alpha;
  wopts.lind_cap = opts.lind_cap;
  wopts.solve = opts.weight_solve;
  for (Index j = 0; j < k; ++j) {
    const auto sel =
        select_weights(panel.z[j], switched_controls(panel, j), b, wopts);
    delta(j) = augmented_linear(sel.weights, y_tilde);
  }
  return delta;
}

double rms(const Matrix& m) {
  return std::sqrt(m.squaredNorm() / static_cast<double>(m.size()));
}

}  // namespace

DebiasFit debiased_fit(const PanelData& panel, Index r,
                       const DebiasOptions& opts) {
  const Index n = panel.n_units();
  const Index t = panel.n_periods();
  if (r < 1 || r > std::min(n, t) - 1) {
    throw DataError("rank too large");
  }
  if (!(opts.alpha > 0.0 && opts.alpha < 1.0)) {
    throw DataError("alpha outside (0,1)");
  }

  DebiasFit fit;
  fit.alpha = opts.alpha;
  fit.epsilon = opts.epsilon;
  fit.ls_fit = ls_interactive_fe(panel, r, opts.ls);

  const double b_tw = 4.0 * static_cast<double>(r) *
                      (std::sqrt(static_cast<double>(n)) +
                       std::sqrt(static_cast<double>(t)));
  fit.b_used = opts.b_override.value_or(b_tw);

  SelectWeightsOptions wopts;
  wopts.criterion = opts.criterion;
  wopts.alpha = opts.alpha;
  wopts.lind_cap = opts.lind_cap;
  wopts.solve = opts.weight_solve;
  const auto selection = select_weights(panel.x, panel.z, fit.b_used, wopts);
  fit.weights = selection.weights;

  const Matrix y_pre = panel.y - fit.ls_fit.gamma;
  fit.beta_pre = augmented_linear(fit.weights, y_pre);
  fit.delta_pre = preliminary_deltas(panel, y_pre, fit.b_used, opts);

  const Matrix detrended =
      panel.y - apply_coefs(panel, fit.beta_pre, fit.delta_pre);
  fit.gamma_pre = truncate_rank(detrended, r);
  fit.u_pre = detrended - fit.gamma_pre;

  fit.beta = augmented_linear(fit.weights, panel.y - fit.gamma_pre);
  fit.c_hat = (4.0 + opts.epsilon) * static_cast<double>(r) *
              spectral_norm(fit.u_pre);
  fit.worst_case_bias = worst_case_bias(fit.c_hat, fit.weights);
  const Matrix& se_resid = opts.se_residuals == SeResiduals::kPre
                               ? fit.u_pre
                               : fit.ls_fit.residuals;
  fit.se = robust_se(fit.weights, se_resid);
  fit.ci = bias_aware_ci(fit.beta, fit.worst_case_bias, fit.se, opts.alpha);

  fit.diagnostics.lind = fit.weights.lind;
  fit.diagnostics.mu_star = fit.weights.mu;
  const double u_rms = rms(fit.u_pre);
  fit.diagnostics.c_over_sigma_proxy = u_rms > 0 ? fit.c_hat / u_rms : 0.0;
  return fit;
}

DebiasFit known_bound_fit(const PanelData& panel, double c_known,
                          const DebiasOptions& opts) {
  if (c_known < 0) {
    throw DataError("negative bias bound");
  }
  if (!(opts.alpha > 0.0 && opts.alpha < 1.0)) {
    throw DataError("alpha outside (0,1)");
  }
  const Index n = panel.n_units();
  const Index t = panel.n_periods();
  const Index k = panel.n_controls();

  DebiasFit fit;
  fit.alpha = opts.alpha;
  fit.epsilon = 0.0;
  fit.ls_fit = ls_interactive_fe(panel, 0, opts.ls);  // pooled OLS baseline

  // Calibrate b = c / sigma_hat from the pooled-OLS residual scale.
  const double dof = static_cast<double>(n * t - (k + 1));
  const double sigma_hat =
      dof > 0 ? std::sqrt(fit.ls_fit.objective / dof) : 0.0;
  double b_default = 0.0;
  if (c_known > 0 && sigma_hat > 1e-300) {
    b_default = c_known / sigma_hat;
  }
  fit.b_used = opts.b_override.value_or(b_default);

  SelectWeightsOptions wopts;
  wopts.criterion = opts.criterion;
  wopts.alpha = opts.alpha;
  wopts.lind_cap = opts.lind_cap;
  wopts.solve = opts.weight_solve;
  const auto selection = select_weights(panel.x, panel.z, fit.b_used, wopts);
  fit.weights = selection.weights;

  fit.beta_pre = augmented_linear(fit.weights, panel.y);
  fit.delta_pre = preliminary_deltas(panel, panel.y, fit.b_used, opts);
  fit.gamma_pre = Matrix::Zero(n, t);
  fit.u_pre = panel.y - apply_coefs(panel, fit.beta_pre, fit.delta_pre);

  fit.beta = fit.beta_pre;
  fit.c_hat = c_known;
  fit.worst_case_bias = worst_case_bias(c_known, fit.weights);
  const Matrix& se_resid = opts.se_residuals == SeResiduals::kPre
                               ? fit.u_pre
                               : fit.ls_fit.residuals;
  fit.se = robust_se(fit.weights, se_resid);
  fit.ci = fixed_bias_ci(fit.beta, fit.worst_case_bias, fit.se, opts.alpha);

  fit.diagnostics.lind = fit.weights.lind;
  fit.diagnostics.mu_star = fit.weights.mu;
  const double u_rms = rms(fit.u_pre);
  fit.diagnostics.c_over_sigma_proxy = u_rms > 0 ? fit.c_hat / u_rms : 0.0;
  return fit;
}

}  // namespace panelfe

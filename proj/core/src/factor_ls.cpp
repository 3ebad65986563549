#include "panelfe/factor_ls.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "panelfe/errors.hpp"
#include "panelfe/rng.hpp"

namespace panelfe {

namespace {

// Stacked covariate design: columns vec(X), vec(Z_1), ..., vec(Z_K).
Matrix covariate_stack(const PanelData& panel) {
  const Index n = panel.n_units();
  const Index t = panel.n_periods();
  const Index k = panel.n_controls();
  Matrix w(n * t, 1 + k);
  w.col(0) = panel.x.reshaped();
  for (Index j = 0; j < k; ++j) {
    w.col(1 + j) = panel.z[j].reshaped();
  }
  return w;
}

Eigen::LDLT<Matrix> checked_gram(const Matrix& w) {
  const Matrix gram = w.transpose() * w;
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
  const Index p = gram.rows();
  if (es.eigenvalues()(0) <= 1e-12 * std::max(1.0, es.eigenvalues()(p - 1))) {
    throw NumericError("collinear covariates after factor removal");
  }
  return Eigen::LDLT<Matrix>(gram);
}

Matrix combine(const PanelData& panel, const Vector& coef) {
  Matrix out = coef(0) * panel.x;
  for (Index j = 0; j < panel.n_controls(); ++j) {
    out += coef(1 + j) * panel.z[j];
  }
  return out;
}

}  // namespace

LsFit ls_interactive_fe(const PanelData& panel, Index r, const LsOptions& opts) {
  const Index n = panel.n_units();
  const Index t = panel.n_periods();
  const Index k = panel.n_controls();
  if (r < 0 || (r > 0 && r >= std::min(n, t))) {
    throw DataError("rank too large");
  }

  const Matrix w = covariate_stack(panel);
  const Eigen::LDLT<Matrix> gram = checked_gram(w);

  auto coefficient_update = [&](const Matrix& gamma) -> Vector {
    return gram.solve(w.transpose() * (panel.y - gamma).reshaped());
  };

  struct StartResult {
    Vector coef;
    Matrix gamma;
    double objective = std::numeric_limits<double>::infinity();
    std::vector<double> trace;
    int iterations = 0;
    bool converged = false;
  };

  auto run_start = [&](const Matrix& gamma_init) -> StartResult {
    StartResult res;
    Matrix gamma = gamma_init;
    double prev = std::numeric_limits<double>::infinity();
    for (int iter = 1; iter <= opts.max_iter; ++iter) {
      res.coef = coefficient_update(gamma);
      const Matrix detrended = panel.y - combine(panel, res.coef);
      gamma = truncate_rank(detrended, r);
      const double obj = (detrended - gamma).squaredNorm();
      res.trace.push_back(obj);
      res.iterations = iter;
      if (r == 0) {
        res.converged = true;
        break;
      }
      if (std::isfinite(prev) && prev - obj <= opts.tol * prev) {
        res.converged = true;
        break;
      }
      prev = obj;
    }
    res.gamma = std::move(gamma);
    res.objective = res.trace.back();
    return res;
  };

  // Zero-factor start; its first coefficient update is pooled OLS, whose
  // residual scale seeds the randomized starts.
  StartResult best = run_start(Matrix::Zero(n, t));
  int n_starts = 1;
  if (r > 0 && opts.n_random_starts > 0) {
    const Vector pooled = gram.solve(w.transpose() * panel.y.reshaped());
    const double pooled_sd = std::sqrt(
        (panel.y - combine(panel, pooled)).squaredNorm() /
        static_cast<double>(n * t));
    for (int s = 1; s <= opts.n_random_starts; ++s) {
      NormalSampler sampler(mix_seed(opts.seed, static_cast<std::uint64_t>(s)));
      const Matrix init =
          truncate_rank(pooled_sd * sampler.normal_matrix(n, t), r);
      StartResult cand = run_start(init);
      ++n_starts;
      // Lowest objective wins; ties within 1e-12 relative keep the earlier
      // start.
      if (cand.objective <
          best.objective - 1e-12 * std::max(best.objective, 1e-300)) {
        best = std::move(cand);
      }
    }
  }

  LsFit fit;
  fit.beta = best.coef(0);
  fit.delta = best.coef.tail(k);
  fit.gamma = std::move(best.gamma);
  fit.residuals = panel.y - combine(panel, best.coef) - fit.gamma;
  fit.objective = best.objective;
  fit.objective_trace = std::move(best.trace);
  fit.n_iterations = best.iterations;
  fit.converged = best.converged;
  fit.n_starts_used = n_starts;
  return fit;
}

Matrix ls_beta_weights(const PanelData& panel) {
  const Matrix w = covariate_stack(panel);
  const Eigen::LDLT<Matrix> gram = checked_gram(w);
  Vector e1 = Vector::Zero(w.cols());
  e1(0) = 1.0;
  const Vector weights = w * gram.solve(e1);
  return weights.reshaped(panel.n_units(), panel.n_periods());
}

}  // namespace panelfe

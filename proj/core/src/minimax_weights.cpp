#include "panelfe/minimax_weights.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "panelfe/errors.hpp"
#include "panelfe/normal.hpp"

namespace panelfe {

namespace {

constexpr double kDegenerateTol = 1e-10;
constexpr double kGoldenRatio = 0.6180339887498949;

Matrix stack_controls(const std::vector<Matrix>& z, Index n, Index t) {
  Matrix zs(n * t, static_cast<Index>(z.size()));
  for (size_t k = 0; k < z.size(); ++k) {
    if (z[k].rows() != n || z[k].cols() != t) {
      throw DataError("dimension error: control matrix shape mismatch");
    }
    zs.col(static_cast<Index>(k)) = z[k].reshaped();
  }
  return zs;
}

// Shared state for solving the partialling-out problem along the mu path.
struct PathSolver {
  const Matrix& x;
  Matrix z_stack;            // NT x K
  Eigen::LDLT<Matrix> gram;  // of z_stack' z_stack
  PartialOutOptions opts;

  PathSolver(const Matrix& x_in, const std::vector<Matrix>& z,
             const PartialOutOptions& solve_opts)
      : x(x_in), opts(solve_opts) {
    if (!x.allFinite()) {
      throw DataError("invalid matrix");
    }
    const Index k = static_cast<Index>(z.size());
    z_stack = stack_controls(z, x.rows(), x.cols());
    if (k > 0) {
      const Matrix g = z_stack.transpose() * z_stack;
      Eigen::SelfAdjointEigenSolver<Matrix> es(g);
      if (es.eigenvalues()(0) <= 1e-12 * std::max(1.0, es.eigenvalues()(k - 1))) {
        throw NumericError("collinear controls");
      }
      gram.compute(g);
    }
  }

  Index n_controls() const { return z_stack.cols(); }

  Vector ols_psi(const Matrix& target) const {
    return gram.solve(z_stack.transpose() * target.reshaped());
  }

  Matrix apply_controls(const Vector& psi) const {
    return (z_stack * psi).reshaped(x.rows(), x.cols());
  }

  struct Solution {
    Vector psi;
    Matrix pi;
    Matrix omega;
    Vector design_sv;  // singular values of x - z.psi
  };

  // K = 0: closed form. K > 0: alternate exact psi and Pi updates of the
  // jointly convex objective until the relative change is below tol.
  Solution solve(double mu, const Vector* warm_psi = nullptr) const {
    Solution sol;
    if (n_controls() == 0) {
      const SvdFactors f = svd(x);
      sol.psi = Vector();
      sol.pi = f.u * (f.s.array() - mu).max(0.0).matrix().asDiagonal() *
               f.v.transpose();
      sol.omega = x - sol.pi;
      sol.design_sv = f.s;
      return sol;
    }
    Vector psi = warm_psi && warm_psi->size() == n_controls() ? *warm_psi
                                                              : ols_psi(x);
    Matrix pi = Matrix::Zero(x.rows(), x.cols());
    double prev_obj = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < opts.max_iter; ++iter) {
      const Matrix detrended = x - apply_controls(psi);
      const SvdFactors f = svd(detrended);
      const Vector shrunk = (f.s.array() - mu).max(0.0);
      pi = f.u * shrunk.asDiagonal() * f.v.transpose();
      const double obj =
          (detrended - pi).squaredNorm() / 2.0 + mu * shrunk.sum();
      if (std::abs(prev_obj - obj) <=
          opts.tol * std::max(std::abs(prev_obj), 1.0)) {
        sol.psi = psi;
        sol.pi = pi;
        sol.omega = detrended - pi;
        sol.design_sv = f.s;
        return sol;
      }
      prev_obj = obj;
      psi = ols_psi(x - pi);
    }
    // Report the residual objective gap at the final iterate.
    const Matrix detrended = x - apply_controls(psi);
    const double gap = std::abs((detrended - pi).squaredNorm() / 2.0 +
                                mu * nuclear_norm(pi) - prev_obj);
    throw NumericError("path solve failed: objective gap " +
                       std::to_string(gap) + " after " +
                       std::to_string(opts.max_iter) + " iterations");
  }
};

double criterion_value(WeightCriterion criterion, double b, double s1_a,
                       double fro_sq, double z_one_sided) {
  if (criterion == WeightCriterion::kMse) {
    return b * b * s1_a * s1_a + fro_sq;
  }
  return b * s1_a + z_one_sided * std::sqrt(fro_sq);
}

struct PointEval {
  double mu = 0.0;
  bool feasible = false;
  double omega_x = 0.0;
  double s1_a = 0.0;
  double fro_sq = 0.0;
  double pi_nuclear = 0.0;
  double omega_pi = 0.0;
  Vector psi;
};

// Builds the candidate mu grid: each distinct singular value of the
// control-partialled x, geometric infill between consecutive pairs, and a
// geometric tail below the smallest (path kinks sit at the singular values).
std::vector<double> build_mu_grid(const Vector& design_sv, int infill) {
  std::vector<double> distinct;
  const double s1 = design_sv.size() > 0 ? design_sv(0) : 0.0;
  for (Index j = 0; j < design_sv.size(); ++j) {
    const double s = design_sv(j);
    if (s <= kRankFloor * s1) {
      break;
    }
    if (distinct.empty() || s < distinct.back() * (1.0 - 1e-10)) {
      distinct.push_back(s);
    }
  }
  std::vector<double> grid;
  if (distinct.empty()) {
    return grid;
  }
  for (size_t i = 0; i + 1 < distinct.size(); ++i) {
    const double hi = distinct[i];
    const double lo = distinct[i + 1];
    grid.push_back(hi);
    for (int m = 1; m <= infill; ++m) {
      grid.push_back(hi * std::pow(lo / hi, static_cast<double>(m) /
                                                (infill + 1)));
    }
  }
  grid.push_back(distinct.back());
  const double smallest = distinct.back();
  for (int m = 1; m <= infill; ++m) {
    grid.push_back(smallest *
                   std::pow(1e-3, static_cast<double>(m) / infill));
  }
  std::sort(grid.begin(), grid.end());
  return grid;
}

}  // namespace

PartialOutResult partial_out_nuclear(const Matrix& x,
                                     const std::vector<Matrix>& z, double mu,
                                     const PartialOutOptions& opts) {
  if (mu < 0) {
    throw DataError("negative threshold");
  }
  const PathSolver solver(x, z, opts);
  auto sol = solver.solve(mu);
  return PartialOutResult{std::move(sol.pi), std::move(sol.psi),
                          std::move(sol.omega)};
}

double lindeberg(const Matrix& a) {
  const double total = a.squaredNorm();
  if (total <= 0.0) {
    throw NumericError("undefined Lindeberg ratio");
  }
  return a.array().square().maxCoeff() / total;
}

namespace {

WeightMatrix finalize_weights(const Matrix& omega, double omega_x, double mu,
                              const std::optional<double>& lind_cap) {
  WeightMatrix w;
  w.a = omega / omega_x;
  w.s1 = spectral_norm(w.a);
  w.fro_sq = w.a.squaredNorm();
  w.lind = lindeberg(w.a);
  w.mu = mu;
  w.lind_cap_violated = lind_cap.has_value() && w.lind > *lind_cap;
  return w;
}

void require_normalizer(double omega_x, double omega_norm, double x_norm) {
  if (std::abs(omega_x) <= kDegenerateTol * omega_norm * x_norm) {
    throw NumericError(
        "degenerate weights: X has no variation outside controls and factor "
        "directions");
  }
}

}  // namespace

WeightMatrix weights_for_mu(const Matrix& x, const std::vector<Matrix>& z,
                            double mu, const PartialOutOptions& opts) {
  const auto res = partial_out_nuclear(x, z, mu, opts);
  const double omega_x = frobenius_inner(res.omega, x);
  require_normalizer(omega_x, res.omega.norm(), x.norm());
  return finalize_weights(res.omega, omega_x, mu, std::nullopt);
}

WeightSelection select_weights(const Matrix& x, const std::vector<Matrix>& z,
                               double b, const SelectWeightsOptions& opts) {
  if (b < 0) {
    throw DataError("negative bias weight");
  }
  const PathSolver solver(x, z, opts.solve);
  const double x_norm = x.norm();
  const double z_one_sided = normal_quantile(1.0 - opts.alpha);

  // Evaluation at one mu. For K = 0 everything follows from the singular
  // values of x; otherwise a path solve is run (warm-started when possible).
  Vector base_sv;
  if (solver.n_controls() == 0) {
    base_sv = singular_values(x);
  } else {
    const Vector psi0 = solver.ols_psi(x);
    base_sv = singular_values(x - solver.apply_controls(psi0));
  }

  auto evaluate = [&](double mu, const Vector* warm) -> PointEval {
    PointEval pe;
    pe.mu = mu;
    if (solver.n_controls() == 0) {
      const auto& s = base_sv;
      double d = 0.0, fro = 0.0, pin = 0.0, opi = 0.0;
      for (Index j = 0; j < s.size(); ++j) {
        const double omega_sv = std::min(s(j), mu);
        const double pi_sv = std::max(s(j) - mu, 0.0);
        d += omega_sv * s(j);
        fro += omega_sv * omega_sv;
        pin += pi_sv;
        opi += omega_sv * pi_sv;
      }
      const double omega_norm = std::sqrt(fro);
      if (std::abs(d) <= kDegenerateTol * omega_norm * x_norm) {
        return pe;
      }
      pe.feasible = true;
      pe.omega_x = d;
      pe.s1_a = (s.size() > 0 ? std::min(s(0), mu) : 0.0) / d;
      pe.fro_sq = fro / (d * d);
      pe.pi_nuclear = pin;
      pe.omega_pi = opi;
      return pe;
    }
    const auto sol = solver.solve(mu, warm);
    const double d = frobenius_inner(sol.omega, x);
    const double omega_norm = sol.omega.norm();
    if (std::abs(d) <= kDegenerateTol * omega_norm * x_norm) {
      pe.psi = sol.psi;
      return pe;
    }
    pe.feasible = true;
    pe.psi = sol.psi;
    pe.omega_x = d;
    pe.s1_a = std::min(sol.design_sv.size() > 0 ? sol.design_sv(0) : 0.0, mu) / d;
    pe.fro_sq = omega_norm * omega_norm / (d * d);
    pe.pi_nuclear = (sol.design_sv.array() - mu).max(0.0).sum();
    pe.omega_pi = frobenius_inner(sol.omega, sol.pi);
    return pe;
  };

  const std::vector<double> grid = build_mu_grid(base_sv, opts.grid_infill);
  if (grid.empty()) {
    throw NumericError(
        "degenerate weights: X has no variation outside controls and factor "
        "directions");
  }

  std::vector<PointEval> evals;
  evals.reserve(grid.size());
  Vector warm_psi;
  for (double mu : grid) {
    evals.push_back(evaluate(mu, warm_psi.size() > 0 ? &warm_psi : nullptr));
    if (evals.back().feasible && evals.back().psi.size() > 0) {
      warm_psi = evals.back().psi;
    }
  }

  auto value_of = [&](const PointEval& pe) {
    return pe.feasible ? criterion_value(opts.criterion, b, pe.s1_a, pe.fro_sq,
                                         z_one_sided)
                       : std::numeric_limits<double>::infinity();
  };

  size_t best = evals.size();
  double best_value = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < evals.size(); ++i) {
    const double v = value_of(evals[i]);
    // Lexicographic (criterion, mu) tie-break; the grid is mu-ascending.
    if (v < best_value * (1.0 - 1e-14) ||
        (best == evals.size() && std::isfinite(v))) {
      best = i;
      best_value = v;
    }
  }
  if (best == evals.size()) {
    throw NumericError(
        "degenerate weights: X has no variation outside controls and factor "
        "directions");
  }

  // Golden-section refinement inside the bracket around the grid minimizer.
  PointEval best_eval = evals[best];
  {
    double lo = best > 0 ? grid[best - 1] : grid[best];
    double hi = best + 1 < grid.size() ? grid[best + 1] : grid[best];
    if (hi > lo) {
      const Vector* bracket_warm =
          best_eval.psi.size() > 0 ? &best_eval.psi : nullptr;
      double a = lo, c = hi;
      double m1 = c - kGoldenRatio * (c - a);
      double m2 = a + kGoldenRatio * (c - a);
      PointEval e1 = evaluate(m1, bracket_warm);
      PointEval e2 = evaluate(m2, bracket_warm);
      while ((c - a) > opts.refine_tol * std::max(c, 1e-300)) {
        if (value_of(e1) <= value_of(e2)) {
          c = m2;
          m2 = m1;
          e2 = e1;
          m1 = c - kGoldenRatio * (c - a);
          e1 = evaluate(m1, bracket_warm);
        } else {
          a = m1;
          m1 = m2;
          e1 = e2;
          m2 = a + kGoldenRatio * (c - a);
          e2 = evaluate(m2, bracket_warm);
        }
        const PointEval& cand = value_of(e1) <= value_of(e2) ? e1 : e2;
        if (value_of(cand) < best_value) {
          best_value = value_of(cand);
          best_eval = cand;
        }
      }
      const PointEval& last = value_of(e1) <= value_of(e2) ? e1 : e2;
      if (value_of(last) < best_value) {
        best_value = value_of(last);
        best_eval = last;
      }
    }
  }

  // Reconstruct the selected weight matrix once.
  const auto sol = solver.solve(best_eval.mu,
                                best_eval.psi.size() > 0 ? &best_eval.psi
                                                         : nullptr);
  const double omega_x = frobenius_inner(sol.omega, x);
  require_normalizer(omega_x, sol.omega.norm(), x_norm);

  WeightSelection selection;
  selection.weights = finalize_weights(sol.omega, omega_x, best_eval.mu,
                                       opts.lind_cap);
  selection.criterion_value = best_value;

  selection.path.reserve(evals.size());
  for (const auto& pe : evals) {
    if (!pe.feasible) {
      continue;
    }
    WeightPathPoint pt;
    pt.mu = pe.mu;
    pt.psi = pe.psi;
    pt.pi_nuclear = pe.pi_nuclear;
    pt.omega_x_inner = pe.omega_x;
    pt.bbar = pe.omega_pi / pe.omega_x;
    pt.var_factor = pe.fro_sq;
    pt.s1_a = pe.s1_a;
    pt.objective = b * b * pe.s1_a * pe.s1_a + pe.fro_sq;
    pt.lind = std::numeric_limits<double>::quiet_NaN();
    if (opts.path_diagnostics) {
      const auto psol = solver.solve(pe.mu, pe.psi.size() > 0 ? &pe.psi
                                                              : nullptr);
      pt.lind = lindeberg(psol.omega);
    }
    selection.path.push_back(std::move(pt));
  }
  return selection;
}

WeightMatrix oracle_weights_small(const Matrix& x, const std::vector<Matrix>& z,
                                  double b, std::optional<double> lind_cap,
                                  const OracleOptions& opts) {
  const Index n = x.rows();
  const Index t = x.cols();
  if (n * t > 100) {
    throw DataError("oracle solver restricted to NT <= 100");
  }
  if (b < 0) {
    throw DataError("negative bias weight");
  }
  const Index k = static_cast<Index>(z.size());
  Matrix constraints(k + 1, n * t);
  constraints.row(0) = x.reshaped().transpose();
  for (Index j = 0; j < k; ++j) {
    if (z[j].rows() != n || z[j].cols() != t) {
      throw DataError("dimension error: control matrix shape mismatch");
    }
    constraints.row(j + 1) = z[j].reshaped().transpose();
  }

  // Feasibility requires x to have variation outside the span of the
  // controls; detect via the constraint Gram matrix.
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(
      constraints * constraints.transpose());
  if (cod.rank() < k + 1) {
    // x linearly dependent on the controls (or controls degenerate): the
    // affine set {<A,X>=1, <A,Z_k>=0} may be empty.
    Vector target = Vector::Zero(k + 1);
    target(0) = 1.0;
    const Vector coef = cod.solve(target);
    const Vector residual = constraints.transpose() * coef;
    if (std::abs(residual.dot(x.reshaped()) - 1.0) > 1e-8) {
      throw NumericError("no feasible weights");
    }
  }

  Vector e1 = Vector::Zero(k + 1);
  e1(0) = 1.0;
  auto project = [&](const Vector& a) -> Vector {
    return a - constraints.transpose() *
                   cod.solve(constraints * a - e1);
  };

  auto objective = [&](const Matrix& a) {
    const double s1 = spectral_norm(a);
    return b * b * s1 * s1 + a.squaredNorm();
  };

  auto cap_ok = [&](const Matrix& a) {
    return !lind_cap.has_value() || lindeberg(a) <= *lind_cap * (1.0 + 1e-9);
  };

  // Clip-and-renormalize heuristic for the (nonconvex) Lindeberg cap;
  // alternates entry clipping with re-projection onto the affine set.
  auto apply_cap = [&](Vector a_vec) -> Vector {
    if (!lind_cap.has_value()) {
      return a_vec;
    }
    for (int pass = 0; pass < 50; ++pass) {
      const double bound =
          std::sqrt(*lind_cap * a_vec.squaredNorm());
      Vector clipped = a_vec.cwiseMax(-bound).cwiseMin(bound);
      clipped = project(clipped);
      if (lindeberg(clipped.reshaped(n, t)) <= *lind_cap * (1.0 + 1e-9)) {
        return clipped;
      }
      a_vec = clipped;
    }
    return a_vec;
  };

  // Min-norm feasible point: exact solution for b = 0 and the warm start
  // for b > 0.
  Vector a_vec = project(Vector::Zero(n * t));
  a_vec = apply_cap(a_vec);
  Matrix a = a_vec.reshaped(n, t);

  double best_obj = cap_ok(a) ? objective(a)
                              : std::numeric_limits<double>::infinity();
  Matrix best_a = a;

  const double eta0 =
      opts.step_scale * a.norm() / (1.0 + 2.0 * b * b * spectral_norm(a));
  for (int iter = 1; iter <= opts.iterations; ++iter) {
    const SvdFactors f = svd(a);
    Matrix grad = 2.0 * a;
    if (b > 0 && f.s.size() > 0) {
      grad += (2.0 * b * b * f.s(0)) * f.u.col(0) * f.v.col(0).transpose();
    }
    const double eta = eta0 / std::sqrt(static_cast<double>(iter));
    a_vec = project(a.reshaped() - eta * grad.reshaped());
    a_vec = apply_cap(a_vec);
    a = a_vec.reshaped(n, t);
    const double obj = objective(a);
    if (cap_ok(a) && obj < best_obj) {
      best_obj = obj;
      best_a = a;
    }
  }

  WeightMatrix w;
  w.a = best_a;
  w.s1 = spectral_norm(best_a);
  w.fro_sq = best_a.squaredNorm();
  w.lind = lindeberg(best_a);
  w.mu = kDirectMu;
  w.lind_cap_violated = lind_cap.has_value() && w.lind > *lind_cap;
  return w;
}

}  // namespace panelfe

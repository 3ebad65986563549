#include "panelfe/montecarlo.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <thread>

#include "panelfe/errors.hpp"
#include "panelfe/normal.hpp"
#include "panelfe/rng.hpp"

namespace panelfe {

SimulatedPanel simulate_dgp(const DgpSpec& spec) {
  if (spec.n < 1 || spec.t < 1 || spec.r_true < 0) {
    throw DataError("invalid design dimensions");
  }
  if (spec.kappa.size() != spec.r_true) {
    throw DataError("kappa length must equal r_true");
  }
  if ((spec.kappa.array() < 0).any()) {
    throw DataError("kappa entries must be nonnegative");
  }
  if (spec.sigma_u <= 0 || spec.sigma_v <= 0) {
    throw DataError("noise standard deviations must be positive");
  }

  NormalSampler sampler(spec.seed);
  const Matrix loadings = sampler.normal_matrix(spec.n, spec.r_true);
  const Matrix factors = sampler.normal_matrix(spec.t, spec.r_true);
  const Matrix u = spec.sigma_u * sampler.normal_matrix(spec.n, spec.t);
  const Matrix v = spec.sigma_v * sampler.normal_matrix(spec.n, spec.t);

  const Matrix common = loadings * factors.transpose();
  const Matrix gamma =
      loadings * spec.kappa.asDiagonal() * factors.transpose();
  Matrix x = common + v;
  Matrix y = spec.beta_true * x + gamma + u;

  SimulatedPanel out{PanelData(std::move(y), std::move(x)),
                     PanelTruth{gamma, spec.beta_true}};
  return out;
}

CalibratedBase calibrate_base(const PanelData& profiled_panel) {
  if (profiled_panel.n_controls() != 0) {
    throw DataError("calibration expects a single-covariate panel");
  }
  const Matrix& x = profiled_panel.x;
  const Matrix& y = profiled_panel.y;
  const double xx = x.squaredNorm();
  if (xx <= 0) {
    throw NumericError("degenerate weights: X has no variation outside controls and factor directions");
  }
  CalibratedBase base;
  base.x = x;
  base.beta_hat = frobenius_inner(x, y) / xx;
  const Matrix resid = y - base.beta_hat * x;
  const double dof = static_cast<double>(x.size() - 1);
  base.sigma_u = std::sqrt(resid.squaredNorm() / dof);
  const SvdFactors f = svd(x);
  const double scale = std::sqrt(f.s(0));
  base.loading = scale * f.u.col(0);
  base.factor = scale * f.v.col(0);
  return base;
}

SimulatedPanel simulate_calibrated(const CalibratedBase& base, double kappa,
                                   std::uint64_t seed) {
  const Index n = base.x.rows();
  const Index t = base.x.cols();
  if (base.loading.size() != n || base.factor.size() != t) {
    throw DataError("dimension error: loading/factor lengths must match x");
  }
  NormalSampler sampler(seed);
  const Matrix gamma = kappa * base.loading * base.factor.transpose();
  Matrix y = base.beta_hat * base.x + gamma +
             base.sigma_u * sampler.normal_matrix(n, t);
  Matrix x = base.x;
  return SimulatedPanel{PanelData(std::move(y), std::move(x)),
                        PanelTruth{gamma, base.beta_hat}};
}

namespace {

struct RepRecord {
  bool failed = false;
  double beta_hat = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double lind = 0.0;
  bool bound_holds = false;
};

SimulatedPanel simulate_design(const StudyDesign& design,
                               std::uint64_t rep_seed) {
  if (std::holds_alternative<DgpSpec>(design)) {
    DgpSpec spec = std::get<DgpSpec>(design);
    spec.seed = rep_seed;
    return simulate_dgp(spec);
  }
  const auto& cal = std::get<CalibratedDesign>(design);
  return simulate_calibrated(cal.base, cal.kappa, rep_seed);
}

RepRecord run_ls_rep(const SimulatedPanel& draw, Index r_est, double alpha,
                     const LsOptions& ls_opts) {
  RepRecord rec;
  const LsFit fit = ls_interactive_fe(draw.panel, r_est, ls_opts);
  const Matrix a_ls = ls_beta_weights(draw.panel);
  const double se = std::sqrt(a_ls.array()
                                  .square()
                                  .cwiseProduct(fit.residuals.array().square())
                                  .sum());
  const double zq = normal_quantile(1.0 - alpha / 2.0);
  rec.beta_hat = fit.beta;
  rec.ci_lo = fit.beta - zq * se;
  rec.ci_hi = fit.beta + zq * se;
  rec.lind = lindeberg(a_ls);
  // Fixed-point nuclear-norm inequality at the true factor matrix.
  const Matrix detrended = draw.panel.y - fit.beta * draw.panel.x;
  Matrix residual_at_truth = detrended - draw.truth.gamma;
  for (Index j = 0; j < draw.panel.n_controls(); ++j) {
    residual_at_truth -= fit.delta(j) * draw.panel.z[j];
  }
  const double bound = 4.0 * static_cast<double>(r_est) *
                       spectral_norm(residual_at_truth);
  const double gap = nuclear_norm(fit.gamma - draw.truth.gamma);
  rec.bound_holds = gap <= bound * (1.0 + 1e-8) + 1e-8;
  return rec;
}

RepRecord run_debiased_rep(const SimulatedPanel& draw, Index r_est,
                           const DebiasOptions& opts) {
  RepRecord rec;
  const DebiasFit fit = debiased_fit(draw.panel, r_est, opts);
  rec.beta_hat = fit.beta;
  rec.ci_lo = fit.ci.first;
  rec.ci_hi = fit.ci.second;
  rec.lind = fit.diagnostics.lind;
  const double gap = nuclear_norm(fit.gamma_pre - draw.truth.gamma);
  rec.bound_holds = gap <= fit.c_hat * (1.0 + 1e-8) + 1e-8;
  return rec;
}

StudySummary aggregate(const std::string& label,
                       const std::vector<RepRecord>& recs, double beta_true) {
  StudySummary s;
  s.estimator = label;
  s.n_reps = static_cast<int>(recs.size());
  double sum = 0.0, sum_sq_err = 0.0, sum_len = 0.0, sum_lind = 0.0;
  int covered = 0, bound_held = 0, used = 0;
  for (const auto& rec : recs) {
    if (rec.failed) {
      ++s.failures;
      continue;
    }
    ++used;
    sum += rec.beta_hat;
    sum_sq_err += (rec.beta_hat - beta_true) * (rec.beta_hat - beta_true);
    sum_len += rec.ci_hi - rec.ci_lo;
    sum_lind += rec.lind;
    if (rec.ci_lo <= beta_true && beta_true <= rec.ci_hi) {
      ++covered;
    }
    if (rec.bound_holds) {
      ++bound_held;
    }
  }
  if (used == 0) {
    return s;
  }
  const double n = static_cast<double>(used);
  const double mean = sum / n;
  s.bias = mean - beta_true;
  s.rmse = std::sqrt(sum_sq_err / n);
  // Population variance so that rmse^2 = bias^2 + std^2 holds exactly.
  const double var = std::max(0.0, sum_sq_err / n - s.bias * s.bias);
  s.std_dev = std::sqrt(var);
  s.length = sum_len / n;
  s.mean_lind = sum_lind / n;
  s.coverage = static_cast<double>(covered) / n;
  s.size = 1.0 - s.coverage;
  s.bound_hold_rate = static_cast<double>(bound_held) / n;
  return s;
}

}  // namespace

std::vector<StudySummary> run_study(const StudyDesign& design, int n_reps,
                                    const std::vector<EstimatorKind>& estimators,
                                    Index r_est, const StudyOptions& opts) {
  if (n_reps < 1) {
    throw DataError("n_reps must be >= 1");
  }
  const std::uint64_t base_seed = std::holds_alternative<DgpSpec>(design)
                                      ? std::get<DgpSpec>(design).seed
                                      : std::get<CalibratedDesign>(design).seed;
  const double beta_true =
      std::holds_alternative<DgpSpec>(design)
          ? std::get<DgpSpec>(design).beta_true
          : std::get<CalibratedDesign>(design).base.beta_hat;

  std::vector<std::vector<RepRecord>> records(
      estimators.size(), std::vector<RepRecord>(n_reps));

  auto run_rep = [&](int j) {
    // Replication j draws with seed mix(base_seed, j); solver restarts get
    // sub-streams of that seed.
    const std::uint64_t rep_seed =
        mix_seed(base_seed, static_cast<std::uint64_t>(j));
    const SimulatedPanel draw = simulate_design(design, rep_seed);
    for (size_t e = 0; e < estimators.size(); ++e) {
      RepRecord& rec = records[e][j];
      try {
        if (estimators[e] == EstimatorKind::kLs) {
          LsOptions ls_opts = opts.ls;
          ls_opts.seed = mix_seed(rep_seed, 1);
          rec = run_ls_rep(draw, r_est, opts.alpha, ls_opts);
        } else {
          DebiasOptions dopts = opts.debias;
          dopts.alpha = opts.alpha;
          dopts.ls.seed = mix_seed(rep_seed, 2);
          rec = run_debiased_rep(draw, r_est, dopts);
        }
      } catch (const std::exception&) {
        rec.failed = true;
      }
    }
  };

  const int threads = std::max(1, opts.threads);
  if (threads == 1) {
    for (int j = 0; j < n_reps; ++j) {
      run_rep(j);
    }
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (int j = next.fetch_add(1); j < n_reps; j = next.fetch_add(1)) {
          run_rep(j);
        }
      });
    }
    for (auto& th : pool) {
      th.join();
    }
  }

  std::vector<StudySummary> summaries;
  summaries.reserve(estimators.size());
  for (size_t e = 0; e < estimators.size(); ++e) {
    const std::string label =
        estimators[e] == EstimatorKind::kLs ? "ls" : "debiased";
    summaries.push_back(aggregate(label, records[e], beta_true));
  }
  return summaries;
}

void emit_report(const std::vector<StudyRow>& rows, ReportFormat format,
                 std::ostream& out) {
  if (rows.empty()) {
    throw DataError("empty report");
  }
  Index n_kappa = 0;
  for (const auto& row : rows) {
    n_kappa = std::max(n_kappa, row.kappa.size());
  }
  std::vector<std::string> header;
  if (n_kappa <= 1) {
    header.push_back("kappa");
    n_kappa = 1;
  } else {
    for (Index k = 0; k < n_kappa; ++k) {
      header.push_back("kappa" + std::to_string(k + 1));
    }
  }
  for (const char* name :
       {"estimator", "bias", "std", "rmse", "size", "length", "coverage",
        "bound_hold_rate", "mean_lind", "n_reps", "failures"}) {
    header.push_back(name);
  }

  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
  };
  auto row_cells = [&](const StudyRow& row) {
    std::vector<std::string> cells;
    for (Index k = 0; k < n_kappa; ++k) {
      cells.push_back(fmt(k < row.kappa.size() ? row.kappa(k) : 0.0));
    }
    const StudySummary& s = row.summary;
    cells.push_back(s.estimator);
    cells.push_back(fmt(s.bias));
    cells.push_back(fmt(s.std_dev));
    cells.push_back(fmt(s.rmse));
    cells.push_back(fmt(s.size));
    cells.push_back(fmt(s.length));
    cells.push_back(fmt(s.coverage));
    cells.push_back(fmt(s.bound_hold_rate));
    cells.push_back(fmt(s.mean_lind));
    cells.push_back(std::to_string(s.n_reps));
    cells.push_back(std::to_string(s.failures));
    return cells;
  };

  if (format == ReportFormat::kCsv) {
    out << "# generator: " << kGeneratorId << "\n";
    for (size_t i = 0; i < header.size(); ++i) {
      out << (i ? "," : "") << header[i];
    }
    out << "\n";
    for (const auto& row : rows) {
      const auto cells = row_cells(row);
      for (size_t i = 0; i < cells.size(); ++i) {
        out << (i ? "," : "") << cells[i];
      }
      out << "\n";
    }
    return;
  }

  auto emit_md_row = [&](const std::vector<std::string>& cells) {
    out << "|";
    for (const auto& c : cells) {
      out << " " << c << " |";
    }
    out << "\n";
  };
  emit_md_row(header);
  std::vector<std::string> rule(header.size(), "---");
  emit_md_row(rule);
  for (const auto& row : rows) {
    emit_md_row(row_cells(row));
  }
  out << "\ngenerator: " << kGeneratorId << "\n";
}

}  // namespace panelfe

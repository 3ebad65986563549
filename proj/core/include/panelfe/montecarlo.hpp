#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "panelfe/debias.hpp"
#include "panelfe/panel_data.hpp"

namespace panelfe {

// Factor-model design: X = sum_r lambda_r f_r' + V,
// Y = X beta + sum_r kappa_r lambda_r f_r' + U, all draws iid normal.
struct DgpSpec {
  Index n = 100;
  Index t = 50;
  Index r_true = 1;
  Vector kappa;  // length r_true, entries >= 0
  double sigma_u = 1.0;
  double sigma_v = 1.0;
  double beta_true = 0.0;
  std::uint64_t seed = 0;
};

struct PanelTruth {
  Matrix gamma;
  double beta = 0.0;
};

struct SimulatedPanel {
  PanelData panel;
  PanelTruth truth;
};

// Draw order: loadings, factors, U, V, each filled row-major.
SimulatedPanel simulate_dgp(const DgpSpec& spec);

// Fixed ingredients of a data-calibrated design: the covariate matrix, a
// rank-one factor direction extracted from it, and the fitted scale.
struct CalibratedBase {
  Matrix x;
  Vector loading;  // length N
  Vector factor;   // length T
  double beta_hat = 0.0;
  double sigma_u = 1.0;
};

// Builds the calibrated base from a profiled single-covariate panel:
// OLS slope of y on x, residual standard deviation, and the first
// principal component of x split symmetrically into loading and factor.
CalibratedBase calibrate_base(const PanelData& profiled_panel);

// Holds x and the factor direction fixed; redraws U ~ N(0, sigma_u^2).
SimulatedPanel simulate_calibrated(const CalibratedBase& base, double kappa,
                                   std::uint64_t seed);

struct CalibratedDesign {
  CalibratedBase base;
  double kappa = 0.0;
  std::uint64_t seed = 0;
};

using StudyDesign = std::variant<DgpSpec, CalibratedDesign>;

enum class EstimatorKind { kLs, kDebiased };

struct StudyOptions {
  double alpha = 0.05;
  DebiasOptions debias;
  LsOptions ls;
  int threads = 1;
};

// Aggregated replication statistics for one estimator on one design.
struct StudySummary {
  std::string estimator;
  double bias = 0.0;
  double std_dev = 0.0;
  double rmse = 0.0;
  double size = 0.0;      // rejection rate of H0: beta = beta_true
  double length = 0.0;    // mean CI width
  double coverage = 0.0;
  double mean_lind = 0.0;
  double bound_hold_rate = 0.0;  // nuclear-norm bound on the factor error
  int n_reps = 0;
  int failures = 0;
};

// Runs n_reps independent replications (seed mixed per replication, so the
// result is independent of the thread schedule) and aggregates. Estimator
// failures are recorded and excluded, never silently dropped.
std::vector<StudySummary> run_study(const StudyDesign& design, int n_reps,
                                    const std::vector<EstimatorKind>& estimators,
                                    Index r_est, const StudyOptions& opts = {});

struct StudyRow {
  Vector kappa;
  StudySummary summary;
};

enum class ReportFormat { kCsv, kMarkdown };

// Deterministic column order:
// kappa..., estimator, bias, std, rmse, size, length, coverage,
// bound_hold_rate, mean_lind, n_reps, failures. Four-decimal formatting.
void emit_report(const std::vector<StudyRow>& rows, ReportFormat format,
                 std::ostream& out);

}  // namespace panelfe

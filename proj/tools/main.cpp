// panelfe: estimation and bias-aware inference for linear panel regressions
// with interactive fixed effects.
//
// Subcommands:
//   estimate   fit a CSV panel and emit a JSON result document
//   simulate   run a Monte Carlo study from a JSON config
//   weights    inspect the regularization path of the minimax weights

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "panelfe/debias.hpp"
#include "panelfe/errors.hpp"
#include "panelfe/montecarlo.hpp"
#include "panelfe/normal.hpp"
#include "panelfe/rng.hpp"

using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct GlobalFlags {
  std::uint64_t seed = 0;
  int threads = 0;  // 0: use PANELFE_THREADS, else 1
  std::string output;
  std::string format = "csv";
};

int effective_threads(const GlobalFlags& flags) {
  if (flags.threads > 0) {
    return flags.threads;
  }
  if (const char* env = std::getenv("PANELFE_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) {
      return n;
    }
  }
  return 1;
}

struct SchemaFlags {
  std::string unit_col = "unit";
  std::string time_col = "time";
  std::string y_col = "y";
  std::string x_col = "x";
  std::string z_cols;  // comma separated

  panelfe::CsvSchema to_schema() const {
    panelfe::CsvSchema schema;
    schema.unit = unit_col;
    schema.time = time_col;
    schema.y = y_col;
    schema.x = x_col;
    std::stringstream ss(z_cols);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) {
        schema.z.push_back(tok);
      }
    }
    return schema;
  }
};

void add_schema_flags(CLI::App* cmd, SchemaFlags& schema) {
  cmd->add_option("--unit-col", schema.unit_col, "Unit column name");
  cmd->add_option("--time-col", schema.time_col, "Time column name");
  cmd->add_option("--y-col", schema.y_col, "Outcome column name");
  cmd->add_option("--x-col", schema.x_col, "Covariate column name");
  cmd->add_option("--z-cols", schema.z_cols,
                  "Comma-separated control column names (default: z1,z2,...)");
}

panelfe::WeightCriterion parse_criterion(const std::string& name) {
  if (name == "mse") {
    return panelfe::WeightCriterion::kMse;
  }
  if (name == "ci-length") {
    return panelfe::WeightCriterion::kCiLength;
  }
  throw CLI::ValidationError("--criterion must be 'mse' or 'ci-length'");
}

panelfe::PanelData load_input_panel(const std::string& path,
                                    const SchemaFlags& schema,
                                    const std::string& profile) {
  panelfe::PanelData panel = panelfe::load_panel_csv(path, schema.to_schema());
  if (!profile.empty()) {
    panel = panelfe::profile_out(panel,
                                 panelfe::parse_deterministic_spec(profile));
  }
  return panel;
}

// Writes to the output file when given, stdout otherwise. The companion
// summary stream avoids mixing prose into machine output.
struct OutputTarget {
  std::ofstream file;
  std::ostream* data = nullptr;
  std::ostream* summary = nullptr;

  explicit OutputTarget(const std::string& path) {
    if (path.empty()) {
      data = &std::cout;
      summary = &std::cerr;
    } else {
      file.open(path);
      if (!file) {
        throw panelfe::DataError("cannot write '" + path + "'");
      }
      data = &file;
      summary = &std::cout;
    }
  }
};

json fit_to_json(const panelfe::DebiasFit& fit, panelfe::Index r) {
  json doc;
  doc["beta"] = fit.beta;
  doc["ci"] = {fit.ci.first, fit.ci.second};
  doc["se"] = fit.se;
  doc["worst_case_bias"] = fit.worst_case_bias;
  doc["c_hat"] = fit.c_hat;
  doc["b_used"] = fit.b_used;
  doc["r"] = r;
  doc["epsilon"] = fit.epsilon;
  doc["alpha"] = fit.alpha;
  doc["beta_pre"] = fit.beta_pre;
  doc["delta_pre"] = std::vector<double>(fit.delta_pre.begin(),
                                         fit.delta_pre.end());
  doc["ls"] = {
      {"beta", fit.ls_fit.beta},
      {"delta", std::vector<double>(fit.ls_fit.delta.begin(),
                                    fit.ls_fit.delta.end())},
  };
  doc["diagnostics"] = {
      {"lind", fit.diagnostics.lind},
      {"mu_star", fit.diagnostics.mu_star},
      {"iterations", fit.ls_fit.n_iterations},
      {"c_over_sigma_proxy", fit.diagnostics.c_over_sigma_proxy},
  };
  return doc;
}

int cmd_estimate(const GlobalFlags& global, const std::string& csv_path,
                 const SchemaFlags& schema, panelfe::Index r, double epsilon,
                 double alpha, const std::string& profile,
                 std::optional<double> case2_c, std::optional<double> b_override,
                 const std::string& criterion, const std::string& se_residuals) {
  panelfe::DebiasOptions opts;
  opts.alpha = alpha;
  opts.epsilon = epsilon;
  opts.b_override = b_override;
  opts.criterion = parse_criterion(criterion);
  opts.ls.seed = global.seed;
  if (se_residuals == "ls") {
    opts.se_residuals = panelfe::SeResiduals::kLs;
  } else if (se_residuals != "pre") {
    throw CLI::ValidationError("--se-residuals must be 'pre' or 'ls'");
  }

  const panelfe::PanelData panel = load_input_panel(csv_path, schema, profile);
  const panelfe::DebiasFit fit =
      case2_c ? panelfe::known_bound_fit(panel, *case2_c, opts)
              : panelfe::debiased_fit(panel, r, opts);

  json doc = fit_to_json(fit, r);
  // LS baseline standard error and CI from the plug-in influence weights.
  const panelfe::Matrix a_ls = panelfe::ls_beta_weights(panel);
  const double ls_se = std::sqrt(a_ls.array()
                                     .square()
                                     .cwiseProduct(
                                         fit.ls_fit.residuals.array().square())
                                     .sum());
  const double zq = panelfe::normal_quantile(1.0 - alpha / 2.0);
  doc["ls"]["se"] = ls_se;
  doc["ls"]["ci"] = {fit.ls_fit.beta - zq * ls_se,
                     fit.ls_fit.beta + zq * ls_se};

  OutputTarget out(global.output);
  *out.data << doc.dump(2) << "\n";
  return 0;
}

int cmd_weights(const GlobalFlags& global, const std::string& csv_path,
                const SchemaFlags& schema, panelfe::Index r,
                std::optional<double> b_flag, const std::string& criterion,
                double alpha, const std::string& profile) {
  const panelfe::PanelData panel = load_input_panel(csv_path, schema, profile);
  const auto n = panel.n_units();
  const auto t = panel.n_periods();
  const double b = b_flag.value_or(
      4.0 * static_cast<double>(r) *
      (std::sqrt(static_cast<double>(n)) + std::sqrt(static_cast<double>(t))));

  panelfe::SelectWeightsOptions opts;
  opts.criterion = parse_criterion(criterion);
  opts.alpha = alpha;
  opts.path_diagnostics = true;
  const panelfe::WeightSelection sel =
      panelfe::select_weights(panel.x, panel.z, b, opts);

  OutputTarget out(global.output);
  *out.data << "mu,s1_a,fro_sq,bbar,var_factor,lind,objective\n";
  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return std::string(buf);
  };
  for (const auto& pt : sel.path) {
    *out.data << fmt(pt.mu) << ',' << fmt(pt.s1_a) << ',' << fmt(pt.var_factor)
              << ',' << fmt(pt.bbar) << ',' << fmt(pt.var_factor) << ','
              << fmt(pt.lind) << ',' << fmt(pt.objective) << "\n";
  }
  *out.summary << "selected mu=" << fmt(sel.weights.mu)
               << " s1=" << fmt(sel.weights.s1)
               << " fro=" << fmt(std::sqrt(sel.weights.fro_sq))
               << " lind=" << fmt(sel.weights.lind) << "\n";
  return 0;
}

panelfe::Vector json_to_vector(const json& j) {
  panelfe::Vector v(j.size());
  for (size_t i = 0; i < j.size(); ++i) {
    v(static_cast<panelfe::Index>(i)) = j[i].get<double>();
  }
  return v;
}

// Expands the config's kappa entry into one design row per sweep point.
std::vector<panelfe::Vector> kappa_rows(const json& j, panelfe::Index r_true) {
  std::vector<panelfe::Vector> rows;
  if (j.is_number()) {
    rows.push_back(panelfe::Vector::Constant(std::max<panelfe::Index>(r_true, 1),
                                             j.get<double>()));
    return rows;
  }
  if (!j.is_array() || j.empty()) {
    throw panelfe::DataError("config key 'kappa' must be a number or array");
  }
  if (j[0].is_array()) {
    for (const auto& row : j) {
      rows.push_back(json_to_vector(row));
    }
    return rows;
  }
  if (r_true == 1) {
    for (const auto& v : j) {
      rows.push_back(panelfe::Vector::Constant(1, v.get<double>()));
    }
    return rows;
  }
  rows.push_back(json_to_vector(j));
  return rows;
}

int cmd_simulate(const GlobalFlags& global, const std::string& config_path) {
  std::ifstream in(config_path);
  if (!in) {
    throw panelfe::DataError("cannot open '" + config_path + "'");
  }
  json cfg;
  try {
    in >> cfg;
  } catch (const json::parse_error& e) {
    throw panelfe::DataError("malformed config: " + std::string(e.what()));
  }
  auto require = [&](const char* key) -> const json& {
    if (!cfg.contains(key)) {
      throw panelfe::DataError(std::string("malformed config: missing key '") +
                               key + "'");
    }
    return cfg[key];
  };

  const std::string design_kind = require("design").get<std::string>();
  const int n_reps = require("n_reps").get<int>();
  const panelfe::Index r_est = require("r_est").get<panelfe::Index>();
  const std::uint64_t seed =
      cfg.value("seed", static_cast<std::uint64_t>(global.seed));

  std::vector<panelfe::EstimatorKind> estimators;
  for (const auto& name : cfg.value("estimators", json::array({"ls", "debiased"}))) {
    const std::string s = name.get<std::string>();
    if (s == "ls") {
      estimators.push_back(panelfe::EstimatorKind::kLs);
    } else if (s == "debiased") {
      estimators.push_back(panelfe::EstimatorKind::kDebiased);
    } else {
      throw panelfe::DataError("malformed config: estimators['" + s + "']");
    }
  }

  panelfe::StudyOptions opts;
  opts.alpha = cfg.value("alpha", 0.05);
  opts.threads = effective_threads(global);
  opts.debias.epsilon = cfg.value("epsilon", 0.0);

  std::vector<panelfe::StudyRow> rows;
  std::ostringstream progress;

  if (design_kind == "factor") {
    panelfe::DgpSpec spec;
    spec.n = require("n").get<panelfe::Index>();
    spec.t = require("t").get<panelfe::Index>();
    spec.r_true = require("r_true").get<panelfe::Index>();
    spec.sigma_u = std::sqrt(cfg.value("sigma_u2", 1.0));
    spec.sigma_v = std::sqrt(cfg.value("sigma_v2", 1.0));
    if (cfg.contains("sigma_u")) {
      spec.sigma_u = cfg["sigma_u"].get<double>();
    }
    if (cfg.contains("sigma_v")) {
      spec.sigma_v = cfg["sigma_v"].get<double>();
    }
    spec.beta_true = cfg.value("beta", 0.0);
    for (const auto& kappa : kappa_rows(require("kappa"), spec.r_true)) {
      if (kappa.size() != spec.r_true) {
        throw panelfe::DataError("malformed config: kappa row length != r_true");
      }
      spec.kappa = kappa;
      spec.seed = seed;
      const auto summaries =
          panelfe::run_study(spec, n_reps, estimators, r_est, opts);
      for (const auto& s : summaries) {
        rows.push_back(panelfe::StudyRow{kappa, s});
        progress << "kappa=" << kappa.transpose() << " " << s.estimator
                 << ": bias=" << s.bias << " rmse=" << s.rmse
                 << " size=" << s.size << " length=" << s.length
                 << " failures=" << s.failures << "\n";
      }
    }
  } else if (design_kind == "calibrated") {
    const std::string base_csv = require("base_csv").get<std::string>();
    SchemaFlags schema;
    const std::string profile = cfg.value("profile", std::string());
    const panelfe::PanelData base_panel =
        load_input_panel(base_csv, schema, profile);
    const panelfe::CalibratedBase base = panelfe::calibrate_base(base_panel);
    for (const auto& kappa : kappa_rows(require("kappa"), 1)) {
      panelfe::CalibratedDesign design{base, kappa(0), seed};
      const auto summaries =
          panelfe::run_study(design, n_reps, estimators, r_est, opts);
      for (const auto& s : summaries) {
        rows.push_back(panelfe::StudyRow{kappa, s});
        progress << "kappa=" << kappa(0) << " " << s.estimator
                 << ": bias=" << s.bias << " rmse=" << s.rmse
                 << " size=" << s.size << " length=" << s.length
                 << " failures=" << s.failures << "\n";
      }
    }
  } else {
    throw panelfe::DataError("malformed config: design['" + design_kind + "']");
  }

  const panelfe::ReportFormat fmt = global.format == "markdown"
                                        ? panelfe::ReportFormat::kMarkdown
                                        : panelfe::ReportFormat::kCsv;
  OutputTarget out(global.output);
  panelfe::emit_report(rows, fmt, *out.data);
  *out.summary << progress.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust estimation and bias-aware inference for panels with "
               "interactive fixed effects"};
  app.require_subcommand(1);

  GlobalFlags global;
  app.add_option("--seed", global.seed, "Base RNG seed")->capture_default_str();
  app.add_option("--threads", global.threads,
                 "Worker threads (default: PANELFE_THREADS or 1)");
  app.add_option("--output", global.output, "Output file (default: stdout)");
  app.add_option("--format", global.format, "Report format: csv or markdown")
      ->check(CLI::IsMember({"csv", "markdown"}));

  // estimate
  auto* est = app.add_subcommand("estimate", "Fit a CSV panel");
  std::string est_csv;
  SchemaFlags est_schema;
  panelfe::Index est_r = 0;
  double est_epsilon = 0.0, est_alpha = 0.05;
  std::string est_profile, est_criterion = "mse", est_se = "pre";
  std::optional<double> est_case2_c, est_b;
  est->add_option("csv", est_csv, "Panel CSV in long format")->required();
  est->add_option("--r", est_r, "Factor-rank upper bound")->required();
  est->add_option("--epsilon", est_epsilon, "Bound slack")->capture_default_str();
  est->add_option("--alpha", est_alpha, "CI level")->capture_default_str();
  est->add_option("--profile", est_profile,
                  "Deterministic spec, e.g. 'unit,time,trend2'");
  est->add_option("--case2-c", est_case2_c,
                  "A-priori nuclear-norm bound (switches to the known-bound fit)");
  est->add_option("--b", est_b, "Override the bias-weight parameter b");
  est->add_option("--criterion", est_criterion, "mse or ci-length")
      ->capture_default_str();
  est->add_option("--se-residuals", est_se, "pre or ls")->capture_default_str();
  add_schema_flags(est, est_schema);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run a Monte Carlo study");
  std::string sim_config;
  sim->add_option("--config", sim_config, "Study config JSON")->required();

  // weights
  auto* wts = app.add_subcommand("weights", "Inspect the weight path");
  std::string wts_csv;
  SchemaFlags wts_schema;
  panelfe::Index wts_r = 1;
  double wts_alpha = 0.05;
  std::string wts_profile, wts_criterion = "mse";
  std::optional<double> wts_b;
  wts->add_option("csv", wts_csv, "Panel CSV in long format")->required();
  wts->add_option("--r", wts_r, "Rank used for the default b")
      ->capture_default_str();
  wts->add_option("--b", wts_b, "Bias-weight parameter (default: 4R(sqrt(N)+sqrt(T)))");
  wts->add_option("--criterion", wts_criterion, "mse or ci-length")
      ->capture_default_str();
  wts->add_option("--alpha", wts_alpha, "CI level for ci-length")
      ->capture_default_str();
  wts->add_option("--profile", wts_profile, "Deterministic spec");
  add_schema_flags(wts, wts_schema);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e);  // --help
    }
    std::cerr << "error:usage: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (est->parsed()) {
      return cmd_estimate(global, est_csv, est_schema, est_r, est_epsilon,
                          est_alpha, est_profile, est_case2_c, est_b,
                          est_criterion, est_se);
    }
    if (sim->parsed()) {
      return cmd_simulate(global, sim_config);
    }
    if (wts->parsed()) {
      return cmd_weights(global, wts_csv, wts_schema, wts_r, wts_b,
                         wts_criterion, wts_alpha, wts_profile);
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error:usage: " << e.what() << "\n";
    return kExitUsage;
  } catch (const panelfe::DataError& e) {
    std::cerr << "error:data: " << e.what() << "\n";
    return kExitData;
  } catch (const panelfe::NumericError& e) {
    std::cerr << "error:numeric: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error:internal: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitUsage;
}

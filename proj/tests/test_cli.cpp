#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "panelfe/montecarlo.hpp"
#include "panelfe/panel_data.hpp"
#include "test_support.hpp"

using json = nlohmann::json;
using namespace panelfe;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliResult run_cli(const std::string& args) {
  const auto dir = std::filesystem::temp_directory_path();
  const std::string out_path = (dir / "cli_stdout.txt").string();
  const std::string err_path = (dir / "cli_stderr.txt").string();
  const std::string cmd = std::string(PANELFE_CLI_PATH) + " " + args + " >" +
                          out_path + " 2>" + err_path;
  const int status = std::system(cmd.c_str());
  CliResult res;
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  res.out = slurp(out_path);
  res.err = slurp(err_path);
  return res;
}

std::string write_simulated_panel(double kappa, Index n, Index t,
                                  std::uint64_t seed, const std::string& name) {
  DgpSpec spec;
  spec.n = n;
  spec.t = t;
  spec.r_true = 1;
  spec.kappa = Vector::Constant(1, kappa);
  spec.seed = seed;
  const SimulatedPanel draw = simulate_dgp(spec);
  const std::string path =
      (std::filesystem::temp_directory_path() / name).string();
  save_panel_csv(draw.panel, path);
  return path;
}

}  // namespace

TEST_CASE("estimate emits the full JSON contract") {
  const std::string csv = write_simulated_panel(0.5, 10, 8, 1, "cli_est.csv");
  const CliResult res = run_cli("estimate " + csv + " --r 1");
  REQUIRE(res.exit_code == 0);
  const json doc = json::parse(res.out);
  for (const char* key :
       {"beta", "ci", "se", "worst_case_bias", "c_hat", "b_used", "r",
        "epsilon", "alpha", "beta_pre", "delta_pre", "ls", "diagnostics"}) {
    CHECK(doc.contains(key));
  }
  CHECK(doc["ci"].size() == 2);
  CHECK(doc["ls"].contains("beta"));
  CHECK(doc["ls"].contains("delta"));
  for (const char* key : {"lind", "mu_star", "iterations"}) {
    CHECK(doc["diagnostics"].contains(key));
  }
  CHECK(doc["r"] == 1);
  CHECK(doc["alpha"] == 0.05);
}

TEST_CASE("case2 with zero bound collapses to the plain normal CI") {
  const std::string csv = write_simulated_panel(0.0, 10, 8, 2, "cli_case2.csv");
  const CliResult res = run_cli("estimate " + csv + " --r 1 --case2-c 0");
  REQUIRE(res.exit_code == 0);
  const json doc = json::parse(res.out);
  const double beta = doc["beta"];
  const double se = doc["se"];
  const double z = 1.959963985;
  CHECK(doc["ci"][0].get<double>() ==
        doctest::Approx(beta - z * se).epsilon(1e-7));
  CHECK(doc["ci"][1].get<double>() ==
        doctest::Approx(beta + z * se).epsilon(1e-7));
  CHECK(doc["worst_case_bias"] == 0.0);
}

TEST_CASE("profiled estimate reports a wider bias-aware CI than LS") {
  // 48 x 33 panel with unit effects, quadratic trends, time effects, and a
  // weak factor on top.
  const Index n = 48, t = 33;
  const Matrix base_x = testsupport::random_matrix(n, t, 3);
  const Matrix gamma = 0.4 * testsupport::random_low_rank(n, t, 1, 4);
  Matrix y = 0.3 * base_x + gamma + testsupport::random_matrix(n, t, 5);
  // Deterministic components that profiling must remove.
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < t; ++j) {
      const double tt = static_cast<double>(j + 1);
      y(i, j) += 2.0 * (i % 5) + 0.01 * (i % 3) * tt +
                 0.001 * (i % 7) * tt * tt + 0.5 * (j % 4);
    }
  }
  const std::string path =
      (std::filesystem::temp_directory_path() / "cli_profiled.csv").string();
  save_panel_csv(PanelData(y, base_x), path);

  const CliResult res =
      run_cli("estimate " + path + " --r 1 --profile unit,time,trend2");
  REQUIRE(res.exit_code == 0);
  const json doc = json::parse(res.out);
  const double debiased_width = doc["ci"][1].get<double>() -
                                doc["ci"][0].get<double>();
  const double ls_width = doc["ls"]["ci"][1].get<double>() -
                          doc["ls"]["ci"][0].get<double>();
  CHECK(debiased_width > ls_width);
}

TEST_CASE("weights path kinks align with the singular values of x") {
  const std::string csv = write_simulated_panel(0.0, 9, 7, 6, "cli_wts.csv");
  const PanelData panel = load_panel_csv(csv);
  const Vector sv = testsupport::jacobi_singular_values(panel.x);

  const CliResult res = run_cli("weights " + csv + " --r 1");
  REQUIRE(res.exit_code == 0);
  // Every singular value of x appears as a grid mu.
  std::vector<double> mus;
  std::istringstream lines(res.out);
  std::string line;
  std::getline(lines, line);  // header
  CHECK(line == "mu,s1_a,fro_sq,bbar,var_factor,lind,objective");
  while (std::getline(lines, line)) {
    mus.push_back(std::stod(line.substr(0, line.find(','))));
  }
  for (Index j = 0; j < sv.size(); ++j) {
    bool found = false;
    for (double mu : mus) {
      if (std::abs(mu - sv(j)) <= 1e-9 * sv(0)) {
        found = true;
        break;
      }
    }
    CHECK(found);
  }
  CHECK(res.err.find("selected mu=") != std::string::npos);
}

TEST_CASE("weights with b = 0 selects the top of the grid") {
  const std::string csv = write_simulated_panel(0.0, 9, 7, 7, "cli_wts0.csv");
  const PanelData panel = load_panel_csv(csv);
  const double s1 = testsupport::jacobi_spectral_norm(panel.x);
  const CliResult res = run_cli("weights " + csv + " --b 0");
  REQUIRE(res.exit_code == 0);
  const auto pos = res.err.find("selected mu=");
  REQUIRE(pos != std::string::npos);
  const double mu_star = std::stod(res.err.substr(pos + 12));
  CHECK(mu_star == doctest::Approx(s1).epsilon(1e-9));
}

TEST_CASE("simulate runs a smoke config and is thread-count invariant") {
  json cfg = {{"design", "factor"}, {"n", 16},       {"t", 12},
              {"r_true", 1},        {"r_est", 1},    {"kappa", {0.0, 0.5}},
              {"n_reps", 6},        {"seed", 99},    {"alpha", 0.05},
              {"estimators", {"ls", "debiased"}}};
  const auto dir = std::filesystem::temp_directory_path();
  const std::string cfg_path = (dir / "cli_study.json").string();
  std::ofstream(cfg_path) << cfg.dump();

  const std::string out1 = (dir / "cli_report1.csv").string();
  const std::string out2 = (dir / "cli_report2.csv").string();
  const CliResult r1 = run_cli("--threads 1 --output " + out1 +
                               " simulate --config " + cfg_path);
  const CliResult r8 = run_cli("--threads 8 --output " + out2 +
                               " simulate --config " + cfg_path);
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r8.exit_code == 0);
  CHECK(slurp(out1) == slurp(out2));

  // 2 kappa rows x 2 estimators + comment + header.
  std::istringstream lines(slurp(out1));
  std::string line;
  int data_rows = 0;
  while (std::getline(lines, line)) {
    if (!line.empty() && line[0] != '#' && line.rfind("kappa", 0) != 0) {
      ++data_rows;
    }
  }
  CHECK(data_rows == 4);
  // One-line summary per design row appears on the summary stream.
  CHECK(r1.out.find("kappa=") != std::string::npos);
}

TEST_CASE("repeated invocations are byte-identical") {
  const std::string csv = write_simulated_panel(0.3, 10, 8, 8, "cli_det.csv");
  const CliResult a = run_cli("estimate " + csv + " --r 1 --seed 5");
  const CliResult b = run_cli("estimate " + csv + " --r 1 --seed 5");
  CHECK(a.exit_code == 0);
  CHECK(a.out == b.out);
}

TEST_CASE("error paths use machine-parseable prefixes and exit codes") {
  const CliResult usage = run_cli("estimate --bogus-flag");
  CHECK(usage.exit_code == 1);
  CHECK(usage.err.find("error:usage:") != std::string::npos);

  const CliResult missing = run_cli("estimate /nonexistent.csv --r 1");
  CHECK(missing.exit_code == 2);
  CHECK(missing.err.find("error:data:") != std::string::npos);

  // Collinear control triggers a numerical failure.
  const std::string csv = write_simulated_panel(0.0, 8, 6, 9, "cli_num.csv");
  const PanelData panel = load_panel_csv(csv);
  PanelData with_dup(panel.y, panel.x, {panel.x});
  const std::string dup_path =
      (std::filesystem::temp_directory_path() / "cli_dup.csv").string();
  save_panel_csv(with_dup, dup_path);
  const CliResult numeric = run_cli("estimate " + dup_path + " --r 1");
  CHECK(numeric.exit_code == 3);
  CHECK(numeric.err.find("error:numeric:") != std::string::npos);

  const CliResult badcfg = run_cli("simulate --config /nonexistent.json");
  CHECK(badcfg.exit_code == 2);
}

#pragma once

#include <string>
#include <vector>

#include "panelfe/linalg.hpp"

namespace panelfe {

// Balanced N x T panel: outcome y, covariate of interest x, and K control
// matrices z. Rows are units, columns are periods, both in ascending label
// order. All matrices share the same shape and carry finite entries only.
struct PanelData {
  Matrix y;
  Matrix x;
  std::vector<Matrix> z;
  std::vector<std::string> unit_labels;    // size N, or empty
  std::vector<std::string> period_labels;  // size T, or empty

  PanelData(Matrix y_in, Matrix x_in, std::vector<Matrix> z_in = {});

  Index n_units() const { return y.rows(); }
  Index n_periods() const { return y.cols(); }
  Index n_controls() const { return static_cast<Index>(z.size()); }
};

// Deterministic components to project out before estimation: unit effects,
// time effects, and unit-specific polynomial trends of degree <= 2.
struct DeterministicSpec {
  bool unit_effects = false;
  bool time_effects = false;
  int unit_trend_degree = 0;

  bool empty() const {
    return !unit_effects && !time_effects && unit_trend_degree == 0;
  }
};

// Parses the CLI mini-language "unit,time,trendN", e.g. "unit,time,trend2".
DeterministicSpec parse_deterministic_spec(const std::string& text);

// Column-name map for panel CSV files in long format. If z is empty,
// columns named z1, z2, ... are picked up automatically in numeric order.
struct CsvSchema {
  std::string unit = "unit";
  std::string time = "time";
  std::string y = "y";
  std::string x = "x";
  std::vector<std::string> z;
};

// Loads a long-format CSV with one row per (unit, time) cell. Units and
// periods are ordered numerically when every label parses as a number,
// lexicographically otherwise; file row order does not matter.
PanelData load_panel_csv(const std::string& path, const CsvSchema& schema = {});

// Inverse of load_panel_csv (rows emitted in (unit, time) order).
void save_panel_csv(const PanelData& panel, const std::string& path,
                    const CsvSchema& schema = {});

// Replaces y, x and every z_k by the residuals from a least-squares
// projection on the deterministic design implied by `spec`. Residuals are
// orthogonal to every design column; the projection handles the collinearity
// between unit and time dummies via a rank-revealing solve.
PanelData profile_out(const PanelData& panel, const DeterministicSpec& spec);

}  // namespace panelfe

#include "panelfe/panel_data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <unordered_map>

#include "panelfe/errors.hpp"

namespace panelfe {

namespace {

void require_same_shape(const Matrix& ref, const Matrix& m, const char* name) {
  if (m.rows() != ref.rows() || m.cols() != ref.cols()) {
    throw DataError(std::string("dimension error: ") + name +
                    " does not match the panel shape");
  }
}

void require_finite_panel(const Matrix& m, const char* name) {
  if (!m.allFinite()) {
    throw DataError(std::string("invalid matrix: non-finite entries in ") + name);
  }
}

std::string trim(const std::string& s) {
  auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) {
    return "";
  }
  auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    out.push_back(trim(field));
  }
  if (!line.empty() && line.back() == ',') {
    out.push_back("");
  }
  return out;
}

std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) {
    return std::nullopt;
  }
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

// Numeric ascending when every label parses as a number, lexicographic
// otherwise; deterministic regardless of file row order.
std::vector<std::string> sorted_labels(const std::vector<std::string>& raw) {
  std::vector<std::string> labels = raw;
  bool all_numeric = true;
  for (const auto& s : labels) {
    if (!parse_number(s)) {
      all_numeric = false;
      break;
    }
  }
  if (all_numeric) {
    std::sort(labels.begin(), labels.end(), [](const auto& a, const auto& b) {
      const double da = *parse_number(a);
      const double db = *parse_number(b);
      if (da != db) {
        return da < db;
      }
      return a < b;
    });
  } else {
    std::sort(labels.begin(), labels.end());
  }
  return labels;
}

}  // namespace

PanelData::PanelData(Matrix y_in, Matrix x_in, std::vector<Matrix> z_in)
    : y(std::move(y_in)), x(std::move(x_in)), z(std::move(z_in)) {
  if (y.rows() < 1 || y.cols() < 1) {
    throw DataError("unbalanced panel: empty panel");
  }
  require_same_shape(y, x, "x");
  require_finite_panel(y, "y");
  require_finite_panel(x, "x");
  for (size_t k = 0; k < z.size(); ++k) {
    const std::string name = "z" + std::to_string(k + 1);
    require_same_shape(y, z[k], name.c_str());
    require_finite_panel(z[k], name.c_str());
  }
}

DeterministicSpec parse_deterministic_spec(const std::string& text) {
  DeterministicSpec spec;
  std::stringstream ss(text);
  std::string token;
  while (std::getline(ss, token, ',')) {
    token = trim(token);
    if (token.empty()) {
      continue;
    }
    if (token == "unit") {
      spec.unit_effects = true;
    } else if (token == "time") {
      spec.time_effects = true;
    } else if (token.rfind("trend", 0) == 0) {
      const auto deg = parse_number(token.substr(5));
      if (!deg || *deg < 0 || *deg > 2 || *deg != std::floor(*deg)) {
        throw DataError("parse error: bad profile token '" + token + "'");
      }
      spec.unit_trend_degree = static_cast<int>(*deg);
    } else {
      throw DataError("parse error: bad profile token '" + token + "'");
    }
  }
  return spec;
}

PanelData load_panel_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("parse error: cannot open '" + path + "'");
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError("parse error: empty file '" + path + "'");
  }
  const std::vector<std::string> header = split_line(line);

  auto column_of = [&](const std::string& name) {
    for (size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) {
        return static_cast<int>(j);
      }
    }
    throw DataError("parse error: missing column '" + name + "'");
  };

  const int unit_col = column_of(schema.unit);
  const int time_col = column_of(schema.time);
  const int y_col = column_of(schema.y);
  const int x_col = column_of(schema.x);

  std::vector<std::string> z_names = schema.z;
  if (z_names.empty()) {
    // Auto-detect z1, z2, ... in numeric order.
    std::map<long, std::string> found;
    for (const auto& name : header) {
      if (name.size() > 1 && name[0] == 'z' &&
          name.find_first_not_of("0123456789", 1) == std::string::npos) {
        found[std::stol(name.substr(1))] = name;
      }
    }
    for (const auto& [idx, name] : found) {
      z_names.push_back(name);
    }
  }
  std::vector<int> z_cols;
  z_cols.reserve(z_names.size());
  for (const auto& name : z_names) {
    z_cols.push_back(column_of(name));
  }

  struct Row {
    std::string unit, time;
    double y, x;
    std::vector<double> z;
  };
  std::vector<Row> rows;
  std::vector<std::string> unit_seen, time_seen;
  std::unordered_map<std::string, int> unit_index, time_index;

  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) {
      continue;
    }
    const auto fields = split_line(line);
    if (fields.size() != header.size()) {
      throw DataError("parse error: row " + std::to_string(line_no) +
                      " has " + std::to_string(fields.size()) +
                      " fields, expected " + std::to_string(header.size()));
    }
    auto numeric_at = [&](int col, const std::string& what) {
      const auto v = parse_number(fields[col]);
      if (!v) {
        throw DataError("parse error: row " + std::to_string(line_no) +
                        ", column '" + what + "': '" + fields[col] + "'");
      }
      return *v;
    };
    Row row;
    row.unit = fields[unit_col];
    row.time = fields[time_col];
    row.y = numeric_at(y_col, schema.y);
    row.x = numeric_at(x_col, schema.x);
    for (size_t k = 0; k < z_cols.size(); ++k) {
      row.z.push_back(numeric_at(z_cols[k], z_names[k]));
    }
    if (unit_index.emplace(row.unit, 0).second) {
      unit_seen.push_back(row.unit);
    }
    if (time_index.emplace(row.time, 0).second) {
      time_seen.push_back(row.time);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) {
    throw DataError("unbalanced panel: no data rows");
  }

  const std::vector<std::string> units = sorted_labels(unit_seen);
  const std::vector<std::string> times = sorted_labels(time_seen);
  const Index n = static_cast<Index>(units.size());
  const Index t = static_cast<Index>(times.size());
  for (Index i = 0; i < n; ++i) {
    unit_index[units[i]] = static_cast<int>(i);
  }
  for (Index j = 0; j < t; ++j) {
    time_index[times[j]] = static_cast<int>(j);
  }

  Matrix y = Matrix::Zero(n, t);
  Matrix x = Matrix::Zero(n, t);
  std::vector<Matrix> z(z_cols.size(), Matrix::Zero(n, t));
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> filled(n, t);
  filled.setConstant(false);

  for (const auto& row : rows) {
    const int i = unit_index[row.unit];
    const int j = time_index[row.time];
    if (filled(i, j)) {
      throw DataError("duplicate observation: unit '" + row.unit +
                      "', time '" + row.time + "'");
    }
    filled(i, j) = true;
    y(i, j) = row.y;
    x(i, j) = row.x;
    for (size_t k = 0; k < row.z.size(); ++k) {
      z[k](i, j) = row.z[k];
    }
  }
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < t; ++j) {
      if (!filled(i, j)) {
        throw DataError("unbalanced panel: missing cell for unit '" +
                        units[i] + "', time '" + times[j] + "'");
      }
    }
  }

  PanelData panel(std::move(y), std::move(x), std::move(z));
  panel.unit_labels = units;
  panel.period_labels = times;
  return panel;
}

void save_panel_csv(const PanelData& panel, const std::string& path,
                    const CsvSchema& schema) {
  std::ofstream out(path);
  if (!out) {
    throw DataError("parse error: cannot write '" + path + "'");
  }
  std::vector<std::string> z_names = schema.z;
  while (static_cast<Index>(z_names.size()) < panel.n_controls()) {
    z_names.push_back("z" + std::to_string(z_names.size() + 1));
  }
  out << schema.unit << ',' << schema.time << ',' << schema.y << ','
      << schema.x;
  for (Index k = 0; k < panel.n_controls(); ++k) {
    out << ',' << z_names[k];
  }
  out << '\n';

  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (Index i = 0; i < panel.n_units(); ++i) {
    for (Index j = 0; j < panel.n_periods(); ++j) {
      const std::string unit = panel.unit_labels.empty()
                                   ? std::to_string(i + 1)
                                   : panel.unit_labels[i];
      const std::string time = panel.period_labels.empty()
                                   ? std::to_string(j + 1)
                                   : panel.period_labels[j];
      out << unit << ',' << time << ',' << fmt(panel.y(i, j)) << ','
          << fmt(panel.x(i, j));
      for (Index k = 0; k < panel.n_controls(); ++k) {
        out << ',' << fmt(panel.z[k](i, j));
      }
      out << '\n';
    }
  }
}

namespace {

// Deterministic design in vec (column-major) order: unit dummies, unit
// trends in the scaled time index, time dummies.
Matrix deterministic_design(Index n, Index t, const DeterministicSpec& spec) {
  std::vector<double> scaled(t);
  for (Index j = 0; j < t; ++j) {
    scaled[j] = t > 1 ? -1.0 + 2.0 * static_cast<double>(j) /
                                  static_cast<double>(t - 1)
                      : 0.0;
  }
  Index p = 0;
  if (spec.unit_effects) {
    p += n;
  }
  p += n * spec.unit_trend_degree;
  if (spec.time_effects) {
    p += t;
  }
  Matrix design = Matrix::Zero(n * t, p);
  Index col = 0;
  if (spec.unit_effects) {
    for (Index i = 0; i < n; ++i, ++col) {
      for (Index j = 0; j < t; ++j) {
        design(i + n * j, col) = 1.0;
      }
    }
  }
  for (int deg = 1; deg <= spec.unit_trend_degree; ++deg) {
    for (Index i = 0; i < n; ++i, ++col) {
      for (Index j = 0; j < t; ++j) {
        design(i + n * j, col) = std::pow(scaled[j], deg);
      }
    }
  }
  if (spec.time_effects) {
    for (Index j = 0; j < t; ++j, ++col) {
      for (Index i = 0; i < n; ++i) {
        design(i + n * j, col) = 1.0;
      }
    }
  }
  return design;
}

}  // namespace

PanelData profile_out(const PanelData& panel, const DeterministicSpec& spec) {
  if (spec.unit_trend_degree < 0 || spec.unit_trend_degree > 2) {
    throw DataError("deterministic design not estimable: trend degree must be in {0,1,2}");
  }
  if (spec.empty()) {
    return panel;
  }
  const Index n = panel.n_units();
  const Index t = panel.n_periods();
  if (spec.unit_trend_degree > 0 &&
      t <= spec.unit_trend_degree + (spec.unit_effects ? 1 : 0)) {
    throw DataError("deterministic design not estimable: too few periods for the trend degree");
  }

  const Matrix design = deterministic_design(n, t, spec);
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(design);
  if (cod.rank() >= n * t) {
    throw DataError("deterministic design not estimable: design saturates the panel");
  }

  const Index k = panel.n_controls();
  Matrix stacked(n * t, 2 + k);
  stacked.col(0) = panel.y.reshaped();
  stacked.col(1) = panel.x.reshaped();
  for (Index m = 0; m < k; ++m) {
    stacked.col(2 + m) = panel.z[m].reshaped();
  }
  const Matrix residual = stacked - design * cod.solve(stacked);

  Matrix y = residual.col(0).reshaped(n, t);
  Matrix x = residual.col(1).reshaped(n, t);
  std::vector<Matrix> z;
  z.reserve(k);
  for (Index m = 0; m < k; ++m) {
    z.push_back(residual.col(2 + m).reshaped(n, t));
  }
  PanelData out(std::move(y), std::move(x), std::move(z));
  out.unit_labels = panel.unit_labels;
  out.period_labels = panel.period_labels;
  return out;
}

}  // namespace panelfe

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "funbuffer/basis.hpp"

namespace funbuffer {

/// Ring-averaged exposure observed at strictly increasing radii, linearly
/// interpolated between rings and held constant beyond both ends.
struct ExposureFunction {
  Eigen::VectorXd radii;
  Eigen::VectorXd values;

  double operator()(double s) const {
    const int r = static_cast<int>(radii.size());
    if (s <= radii(0)) return values(0);
    if (s >= radii(r - 1)) return values(r - 1);
    const double* begin = radii.data();
    int hi = static_cast<int>(std::upper_bound(begin, begin + r, s) - begin);
    const int lo = hi - 1;
    const double t = (s - radii(lo)) / (radii(hi) - radii(lo));
    return (1.0 - t) * values(lo) + t * values(hi);
  }
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Right-censored survival data with a shared exposure radius grid.
struct SurvivalDataset {
  Eigen::VectorXd time;        // T_i > 0
  Eigen::VectorXi event;       // Delta_i in {0,1}
  Eigen::MatrixXd covariates;  // n x p
  Eigen::VectorXd radii;       // shared, strictly increasing
  Eigen::MatrixXd exposures;   // n x R
  std::vector<int> strata;     // empty = single stratum
  std::vector<std::string> covariate_names;

  int n() const { return static_cast<int>(time.size()); }
  int p() const { return static_cast<int>(covariates.cols()); }
  int ring_count() const { return static_cast<int>(radii.size()); }

  ExposureFunction exposure(int i) const {
    return ExposureFunction{radii, exposures.row(i).transpose()};
  }

  void validate() const {
    if (n() == 0) throw DataError("dataset: no subjects");
    for (int i = 0; i < n(); ++i) {
      if (!(time(i) > 0.0)) throw DataError("dataset: non-positive time at row " + std::to_string(i + 1));
      if (event(i) != 0 && event(i) != 1)
        throw DataError("dataset: event indicator not in {0,1} at row " + std::to_string(i + 1));
    }
    if (event.sum() < 1) throw DataError("dataset: needs at least one event");
    for (int r = 1; r < ring_count(); ++r)
      if (!(radii(r) > radii(r - 1))) throw DataError("non-increasing radii");
    if (!strata.empty() && static_cast<int>(strata.size()) != n())
      throw DataError("dataset: strata size mismatch");
  }
};

/// Column mapping for load_csv. Exposure columns are named
/// `<exposure_prefix><radius>`, e.g. x@90, x@150. Columns that are neither
/// time, event, strata nor exposure are treated as scalar covariates unless
/// an explicit list is given.
struct CsvSchema {
  std::string time_col{"time"};
  std::string event_col{"event"};
  std::string strata_col{"strata"};  // used only if present in the header
  std::string exposure_prefix{"x@"};
  std::vector<std::string> covariate_cols{};
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim stray whitespace and CR
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ' || cell.back() == '\t'))
      cell.pop_back();
    size_t b = 0;
    while (b < cell.size() && (cell[b] == ' ' || cell[b] == '\t')) ++b;
    out.push_back(cell.substr(b));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline double parse_number(const std::string& cell, int row, const std::string& col) {
  if (cell.empty())
    throw DataError("missing value in column '" + col + "' at row " + std::to_string(row));
  try {
    size_t pos = 0;
    const double v = std::stod(cell, &pos);
    if (pos != cell.size()) throw std::invalid_argument(cell);
    if (!std::isfinite(v)) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw DataError("non-numeric cell '" + cell + "' in column '" + col + "' at row " +
                    std::to_string(row));
  }
}

}  // namespace detail

inline SurvivalDataset load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file: " + path);
  const auto header = detail::split_csv_line(line);

  std::map<std::string, int> col_index;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    if (col_index.count(header[c])) throw DataError("duplicate column: " + header[c]);
    col_index[header[c]] = c;
  }
  if (!col_index.count(schema.time_col)) throw DataError("missing column: " + schema.time_col);
  if (!col_index.count(schema.event_col)) throw DataError("missing column: " + schema.event_col);

  std::vector<int> exposure_cols;
  std::vector<double> radii;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const auto& name = header[c];
    if (name.rfind(schema.exposure_prefix, 0) == 0) {
      exposure_cols.push_back(c);
      radii.push_back(detail::parse_number(name.substr(schema.exposure_prefix.size()), 0, name));
    }
  }
  if (exposure_cols.empty()) throw DataError("no exposure columns with prefix '" + schema.exposure_prefix + "'");
  for (size_t r = 1; r < radii.size(); ++r)
    if (!(radii[r] > radii[r - 1])) throw DataError("non-increasing radii");

  std::vector<int> covariate_cols;
  std::vector<std::string> covariate_names;
  const bool has_strata = col_index.count(schema.strata_col) > 0;
  if (!schema.covariate_cols.empty()) {
    for (const auto& name : schema.covariate_cols) {
      if (!col_index.count(name)) throw DataError("missing column: " + name);
      covariate_cols.push_back(col_index[name]);
      covariate_names.push_back(name);
    }
  } else {
    for (int c = 0; c < static_cast<int>(header.size()); ++c) {
      const auto& name = header[c];
      if (name == schema.time_col || name == schema.event_col) continue;
      if (has_strata && name == schema.strata_col) continue;
      if (name.rfind(schema.exposure_prefix, 0) == 0) continue;
      covariate_cols.push_back(c);
      covariate_names.push_back(name);
    }
  }

  std::vector<std::vector<std::string>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(lineno - 1) + " has " + std::to_string(cells.size()) +
                      " cells, expected " + std::to_string(header.size()));
    rows.push_back(std::move(cells));
  }
  const int n = static_cast<int>(rows.size());
  if (n == 0) throw DataError("no data rows in " + path);

  SurvivalDataset ds;
  ds.time.resize(n);
  ds.event.resize(n);
  ds.covariates.resize(n, static_cast<int>(covariate_cols.size()));
  ds.radii = Eigen::Map<Eigen::VectorXd>(radii.data(), static_cast<int>(radii.size()));
  ds.exposures.resize(n, static_cast<int>(exposure_cols.size()));
  ds.covariate_names = covariate_names;

  std::map<std::string, int> strata_ids;
  if (has_strata) ds.strata.resize(n);
  for (int i = 0; i < n; ++i) {
    const int row = i + 1;
    ds.time(i) = detail::parse_number(rows[i][col_index[schema.time_col]], row, schema.time_col);
    const double ev = detail::parse_number(rows[i][col_index[schema.event_col]], row, schema.event_col);
    if (ev != 0.0 && ev != 1.0)
      throw DataError("event indicator not in {0,1} at row " + std::to_string(row));
    ds.event(i) = static_cast<int>(ev);
    for (int c = 0; c < static_cast<int>(covariate_cols.size()); ++c)
      ds.covariates(i, c) = detail::parse_number(rows[i][covariate_cols[c]], row, covariate_names[c]);
    for (int c = 0; c < static_cast<int>(exposure_cols.size()); ++c)
      ds.exposures(i, c) = detail::parse_number(rows[i][exposure_cols[c]], row, header[exposure_cols[c]]);
    if (has_strata) {
      const auto& label = rows[i][col_index[schema.strata_col]];
      auto [it, ignored] = strata_ids.try_emplace(label, static_cast<int>(strata_ids.size()));
      ds.strata[i] = it->second;
    }
  }
  ds.validate();
  return ds;
}

/// Mean-centers scalar covariates and per-radius exposure values (assumption
/// that both are centered underlies the model; the partial likelihood itself
/// is invariant, this is numerical hygiene).
inline SurvivalDataset center(SurvivalDataset ds) {
  if (ds.n() == 0) return ds;
  ds.covariates.rowwise() -= ds.covariates.colwise().mean();
  ds.exposures.rowwise() -= ds.exposures.colwise().mean();
  return ds;
}

/// Design produced from a dataset and a basis: X = [Phi | Z] with
/// Phi_{ik} = int X_i(s) B_k(s) ds on the unit domain, plus the time-ordering
/// bookkeeping the partial likelihood needs.
struct DesignedData {
  Eigen::MatrixXd X;  // n x (L_n + p), functional block first
  int ln{0};
  int p{0};
  int degree{0};
  Eigen::VectorXd time;
  Eigen::VectorXi event;
  std::vector<int> strata;                     // size n (all zero if unstratified)
  std::vector<std::vector<int>> stratum_order;  // per stratum, indices by descending time

  int n() const { return static_cast<int>(time.size()); }
  int dim() const { return ln + p; }
  auto phi() const { return X.leftCols(ln); }
  auto z() const { return X.rightCols(p); }

  /// Copy with the functional block restricted to the given basis columns.
  DesignedData restrict_columns(const std::vector<int>& active) const {
    DesignedData out = *this;
    out.ln = static_cast<int>(active.size());
    out.X.resize(n(), out.ln + p);
    for (int k = 0; k < out.ln; ++k) out.X.col(k) = X.col(active[k]);
    out.X.rightCols(p) = X.rightCols(p);
    return out;
  }
};

namespace detail {

inline void build_order(DesignedData& dd) {
  const int n = dd.n();
  if (dd.strata.empty()) dd.strata.assign(n, 0);
  const int n_strata = 1 + *std::max_element(dd.strata.begin(), dd.strata.end());
  dd.stratum_order.assign(n_strata, {});
  for (int i = 0; i < n; ++i) dd.stratum_order[dd.strata[i]].push_back(i);
  for (auto& order : dd.stratum_order) {
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (dd.time(a) != dd.time(b)) return dd.time(a) > dd.time(b);
      return a < b;
    });
    bool any_event = false;
    for (int i : order) any_event = any_event || dd.event(i) == 1;
    if (!order.empty() && !any_event)
      throw DataError("stratum without events; partial likelihood undefined");
  }
}

}  // namespace detail

inline DesignedData design(const SurvivalDataset& ds, const BSplineBasis& basis) {
  ds.validate();
  const double eps = 1e-9 * std::max(1.0, std::abs(ds.radii(ds.ring_count() - 1)));
  if (basis.domain_hi() > ds.radii(ds.ring_count() - 1) + eps)
    throw DataError("basis domain outside exposure support");

  const auto grid = basis.quadrature_grid();
  const int g = static_cast<int>(grid.size());
  const Eigen::VectorXd w = trapezoid_weights(grid);
  Eigen::MatrixXd bg = basis.eval_matrix(grid);  // g x L_n
  for (int row = 0; row < g; ++row) bg.row(row) *= w(row);

  DesignedData dd;
  dd.ln = basis.size();
  dd.p = ds.p();
  dd.degree = basis.degree();
  dd.time = ds.time;
  dd.event = ds.event;
  dd.strata = ds.strata;
  dd.X.resize(ds.n(), dd.ln + dd.p);

  Eigen::MatrixXd xvals(ds.n(), g);
  for (int i = 0; i < ds.n(); ++i) {
    const ExposureFunction x = ds.exposure(i);
    for (int j = 0; j < g; ++j) xvals(i, j) = x(basis.to_phys(grid[j]));
  }
  dd.X.leftCols(dd.ln).noalias() = xvals * bg;
  dd.X.rightCols(dd.p) = ds.covariates;
  detail::build_order(dd);
  return dd;
}

}  // namespace funbuffer

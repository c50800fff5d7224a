#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "funbuffer/inference.hpp"
#include "funbuffer/simulate.hpp"

namespace funbuffer::cli {

using nlohmann::json;

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kNumericalError = 4 };

struct RunConfig {
  // data
  std::string data_path{};
  CsvSchema schema{};
  // basis
  int degree{3};
  int mn{26};
  std::optional<double> domain_lo{};
  std::optional<double> domain_hi{};
  std::vector<double> knots{};  // physical inner knots, overrides mn when set
  // penalty / tuning
  std::string variant{"spline-gbridge"};
  double gamma{0.5};
  int grid_n1{20}, grid_n2{10};
  double grid_l1_lo{1e-4}, grid_l1_hi{1e1};
  double grid_l2_lo{1e-3}, grid_l2_hi{3e1};
  double refit_l2_lo{1e-3}, refit_l2_hi{3e-1};
  bool warm_start{true};
  int n_starts{1};
  // simulation
  std::string scenario{"II"};
  int n{1000};
  int reps{100};
  double censor_fraction{0.10};
  bool coverage_dump{false};
  // misc
  std::uint64_t seed{1};
  int threads{0};  // 0 = hardware concurrency
  double hr_increment{0.1};
  std::string out_dir{"out"};

  int resolved_threads() const {
    if (threads > 0) return threads;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
  }

  std::map<std::string, std::string> flat() const {
    std::map<std::string, std::string> kv;
    auto put = [&](const std::string& k, auto v) {
      std::ostringstream os;
      os << std::setprecision(17) << v;
      kv[k] = os.str();
    };
    put("data", data_path);
    put("time_col", schema.time_col);
    put("event_col", schema.event_col);
    put("strata_col", schema.strata_col);
    put("exposure_prefix", schema.exposure_prefix);
    put("degree", degree);
    put("Mn", mn);
    if (domain_lo) put("domain_lo", *domain_lo);
    if (domain_hi) put("domain_hi", *domain_hi);
    if (!knots.empty()) {
      std::ostringstream os;
      os << std::setprecision(17);
      for (size_t i = 0; i < knots.size(); ++i) os << (i ? "," : "") << knots[i];
      kv["knots"] = os.str();
    }
    put("variant", variant);
    put("gamma", gamma);
    put("grid_l1", grid_n1);
    put("grid_l2", grid_n2);
    put("grid_l1_lo", grid_l1_lo);
    put("grid_l1_hi", grid_l1_hi);
    put("grid_l2_lo", grid_l2_lo);
    put("grid_l2_hi", grid_l2_hi);
    put("refit_l2_lo", refit_l2_lo);
    put("refit_l2_hi", refit_l2_hi);
    put("warm_start", warm_start ? 1 : 0);
    put("n_starts", n_starts);
    put("scenario", scenario);
    put("n", n);
    put("reps", reps);
    put("censor_fraction", censor_fraction);
    put("coverage_dump", coverage_dump ? 1 : 0);
    put("seed", seed);
    put("threads", threads);
    put("hr_increment", hr_increment);
    put("out", out_dir);
    return kv;
  }
};

namespace detail {

inline void ensure_out_dir(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
}

inline std::string out_path(const RunConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.out_dir) / name).string();
}

inline void write_resolved_config(const RunConfig& cfg) {
  std::ofstream out(out_path(cfg, "config.resolved"));
  for (const auto& [k, v] : cfg.flat()) out << k << "=" << v << "\n";
}

inline void write_json(const RunConfig& cfg, const std::string& name, const json& j) {
  std::ofstream out(out_path(cfg, name));
  out << j.dump(2) << "\n";
}

class RunLog {
 public:
  explicit RunLog(const std::string& path) : out_(path) {}
  template <class... Args>
  void line(Args&&... args) {
    (out_ << ... << args) << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

inline BSplineBasis make_basis(const RunConfig& cfg, const SurvivalDataset& ds) {
  BasisSpec spec;
  spec.degree = cfg.degree;
  spec.domain_lo = cfg.domain_lo.value_or(ds.radii(0));
  spec.domain_hi = cfg.domain_hi.value_or(ds.radii(ds.ring_count() - 1));
  if (!cfg.knots.empty()) {
    spec.inner_knots = cfg.knots;
    spec.inner_knot_count = static_cast<int>(cfg.knots.size());
  } else {
    spec.inner_knot_count = cfg.mn;
  }
  return BSplineBasis(spec);
}

inline void write_beta_curve(const RunConfig& cfg, const std::vector<CurvePoint>& curve) {
  std::ofstream out(out_path(cfg, "beta_curve.csv"));
  out << "s,beta,se,lo,hi\n" << std::setprecision(10);
  for (const auto& pt : curve)
    out << pt.s << ',' << pt.beta << ',' << pt.se << ',' << pt.lo << ',' << pt.hi << '\n';
}

inline json regions_json(const RegionSelection& sel, const BSplineBasis& basis) {
  json j;
  j["buffer_distance"] =
      sel.empty() ? 0.0 : basis.to_phys(sel.buffer_unit);
  j["buffer_distance_unit"] = sel.buffer_unit;
  json spans = json::array();
  for (const auto& [lo, hi] : sel.spans(basis))
    spans.push_back({basis.to_phys(lo), basis.to_phys(hi)});
  j["intervals"] = spans;
  j["interval_indices"] = sel.intervals;
  j["active_basis"] = sel.active;
  j["note"] = "conditional on selected region";
  return j;
}

inline json cumulative_json(const CumulativeEffect& ce, double increment) {
  json j;
  j["has_region"] = ce.has_region;
  if (!ce.has_region) {
    j["message"] = "no non-null region";
    j["estimate"] = 0.0;
    j["variance"] = 0.0;
    return j;
  }
  j["estimate"] = ce.estimate;
  j["variance"] = ce.variance;
  j["ci"] = {ce.lo, ce.hi};
  j["hr_increment"] = increment;
  j["hazard_ratio"] = ce.hazard_ratio(increment);
  j["hazard_ratio_ci"] = {std::min(ce.hazard_ratio_lo(increment), ce.hazard_ratio_hi(increment)),
                          std::max(ce.hazard_ratio_lo(increment), ce.hazard_ratio_hi(increment))};
  j["note"] = "conditional on selected region";
  return j;
}

}  // namespace detail

/// Two-stage analysis: BIC-tuned sparse fit, region selection, smoothness-only
/// refit with pointwise and cumulative uncertainty. Writes beta_curve.csv,
/// regions.json, cumulative.json, tuning.csv, run.log and config.resolved.
inline int run_fit(const RunConfig& cfg) {
  try {
    detail::ensure_out_dir(cfg);
    detail::write_resolved_config(cfg);
    detail::RunLog log(detail::out_path(cfg, "run.log"));
    Variant variant;
    try {
      variant = variant_from_name(cfg.variant);
    } catch (const std::invalid_argument& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return kConfigError;
    }

    SurvivalDataset ds;
    try {
      ds = load_csv(cfg.data_path, cfg.schema);
    } catch (const DataError& e) {
      std::cerr << "data error: " << e.what() << "\n";
      return kDataError;
    }
    log.line("loaded ", ds.n(), " subjects, ", ds.p(), " covariates, ", ds.ring_count(),
             " rings, ", ds.event.sum(), " events");
    ds = center(ds);

    BSplineBasis basis = [&] {
      try {
        return detail::make_basis(cfg, ds);
      } catch (const std::invalid_argument& e) {
        throw std::runtime_error(std::string("config error: ") + e.what());
      }
    }();
    const PenaltyMatrices pen = roughness_matrix(basis);
    const DesignedData dd = design(ds, basis);

    const TuningGrid grid = TuningGrid::make(dd, pen, cfg.grid_n1, cfg.grid_n2, cfg.grid_l1_lo,
                                             cfg.grid_l1_hi, cfg.grid_l2_lo, cfg.grid_l2_hi);
    SelectOptions sopts;
    sopts.threads = cfg.resolved_threads();
    sopts.warm_start = cfg.warm_start;
    sopts.grid_starts = cfg.n_starts;
    sopts.gamma = cfg.gamma;
    sopts.solver.seed = cfg.seed;

    log.line("stage 1: ", variant_name(variant), " over ", grid.lambda1.size(), "x",
             grid.lambda2.size(), " grid");
    const TuningReport tr = select(dd, pen, variant, grid, sopts);
    tr.write_csv(detail::out_path(cfg, "tuning.csv"));
    log.line("stage 1 selected lambda1=", tr.selected_cell().lambda1,
             " lambda2=", tr.selected_cell().lambda2, " bic=", tr.selected_cell().bic,
             " nonzero_b=", tr.selected_cell().nonzero_b);

    const RegionSelection sel = select_regions(tr.best_fit, basis);
    detail::write_json(cfg, "regions.json", detail::regions_json(sel, basis));
    log.line("buffer distance: ", sel.empty() ? 0.0 : basis.to_phys(sel.buffer_unit));

    std::vector<double> l2_grid = logspace(cfg.refit_l2_lo, cfg.refit_l2_hi, cfg.grid_n2);
    const double anchor = TuningGrid::curvature_scale(dd, pen.J);
    for (double& v : l2_grid) v *= anchor;
    const InferenceResult inf = refit(dd, pen, sel, l2_grid, sopts.solver, sopts.threads);
    log.line("stage 2: refit on ", sel.active.size(), " basis functions, lambda2=", inf.lambda2);

    detail::write_beta_curve(cfg, variance_curve(inf, basis));
    detail::write_json(cfg, "cumulative.json",
                       detail::cumulative_json(cumulative_effect(inf, basis), cfg.hr_increment));
    log.line("done");
    return kOk;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    std::cerr << msg << "\n";
    return msg.rfind("config error", 0) == 0 ? kConfigError : kNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
}

/// Monte-Carlo study runner. Writes reps.csv, aggregates.json, optional
/// coverage.csv (truth-region refit ASE/ESE/coverage per grid point), and
/// config.resolved.
inline int run_simulate(const RunConfig& cfg) {
  try {
    detail::ensure_out_dir(cfg);
    detail::write_resolved_config(cfg);

    StudyConfig study;
    study.scenario.scenario = scenario_from_name(cfg.scenario);
    study.scenario.n = cfg.n;
    study.scenario.censor_fraction = cfg.censor_fraction;
    study.scenario.seed = cfg.seed;
    study.n_reps = cfg.reps;
    study.threads = cfg.resolved_threads();
    study.variants.clear();
    std::stringstream vs(cfg.variant);
    std::string tok;
    while (std::getline(vs, tok, ',')) study.variants.push_back(variant_from_name(tok));
    if (study.variants.empty()) study.variants = {Variant::SplineGbridge};
    study.grid_n1 = cfg.grid_n1;
    study.grid_n2 = cfg.grid_n2;
    study.grid_l1_lo = cfg.grid_l1_lo;
    study.grid_l1_hi = cfg.grid_l1_hi;
    study.grid_l2_lo = cfg.grid_l2_lo;
    study.grid_l2_hi = cfg.grid_l2_hi;
    study.select.warm_start = cfg.warm_start;
    study.select.grid_starts = cfg.n_starts;
    study.select.gamma = cfg.gamma;

    const ReplicationReport report = run_study(study);

    {
      std::ofstream out(detail::out_path(cfg, "reps.csv"));
      out << "variant,rep,imse,supremum,theta1,theta2,lambda1,lambda2,nonzero_b,failed\n"
          << std::setprecision(10);
      for (const auto& vs : report.variants)
        for (const auto& r : vs.reps)
          out << variant_name(vs.variant) << ',' << r.rep << ',' << r.imse << ',' << r.supremum
              << ',' << r.theta1 << ',' << r.theta2 << ',' << r.lambda1 << ',' << r.lambda2 << ','
              << r.nonzero_b << ',' << (r.failed ? 1 : 0) << '\n';
    }
    json agg;
    agg["scenario"] = cfg.scenario;
    agg["n"] = cfg.n;
    agg["reps"] = cfg.reps;
    agg["seed"] = cfg.seed;
    agg["censor_rate"] = report.censor_rate;
    agg["variants"] = json::array();
    for (const auto& vs : report.variants) {
      json v;
      v["variant"] = variant_name(vs.variant);
      v["mean_imse"] = vs.mean_imse;
      v["sd_imse"] = vs.sd_imse;
      v["mean_supremum"] = vs.mean_supremum;
      v["sd_supremum"] = vs.sd_supremum;
      v["pct_bias_theta1"] = vs.pct_bias_theta1;
      v["ese_theta1"] = vs.ese_theta1;
      v["pct_bias_theta2"] = vs.pct_bias_theta2;
      v["ese_theta2"] = vs.ese_theta2;
      v["failures"] = vs.failures;
      agg["variants"].push_back(v);
    }
    detail::write_json(cfg, "aggregates.json", agg);

    if (cfg.coverage_dump) {
      const auto s_grid = linspace(0.05, 0.45, 9);
      const CoverageStudy cov = run_coverage_study(study, s_grid);
      std::ofstream out(detail::out_path(cfg, "coverage.csv"));
      out << "s,truth,mean_beta,ase,ese,coverage\n" << std::setprecision(10);
      for (const auto& pt : cov.points)
        out << pt.s << ',' << pt.truth << ',' << pt.mean_beta << ',' << pt.ase << ',' << pt.ese
            << ',' << pt.coverage << '\n';
    }
    return kOk;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
}

/// Grid evaluation only: writes the full BIC surface and the selected pair.
inline int run_tune(const RunConfig& cfg) {
  try {
    detail::ensure_out_dir(cfg);
    detail::write_resolved_config(cfg);
    const Variant variant = variant_from_name(cfg.variant);
    SurvivalDataset ds;
    try {
      ds = load_csv(cfg.data_path, cfg.schema);
    } catch (const DataError& e) {
      std::cerr << "data error: " << e.what() << "\n";
      return kDataError;
    }
    ds = center(ds);
    const BSplineBasis basis = detail::make_basis(cfg, ds);
    const PenaltyMatrices pen = roughness_matrix(basis);
    const DesignedData dd = design(ds, basis);
    const TuningGrid grid = TuningGrid::make(dd, pen, cfg.grid_n1, cfg.grid_n2, cfg.grid_l1_lo,
                                             cfg.grid_l1_hi, cfg.grid_l2_lo, cfg.grid_l2_hi);
    SelectOptions sopts;
    sopts.threads = cfg.resolved_threads();
    sopts.warm_start = cfg.warm_start;
    sopts.grid_starts = cfg.n_starts;
    sopts.gamma = cfg.gamma;
    sopts.solver.seed = cfg.seed;
    const TuningReport tr = select(dd, pen, variant, grid, sopts);
    tr.write_csv(detail::out_path(cfg, "tuning.csv"));
    json j;
    j["variant"] = cfg.variant;
    j["lambda1"] = tr.selected_cell().lambda1;
    j["lambda2"] = tr.selected_cell().lambda2;
    j["bic"] = tr.selected_cell().bic;
    j["df"] = tr.selected_cell().df;
    j["nonzero_b"] = tr.selected_cell().nonzero_b;
    json cells = json::array();
    for (const auto& c : tr.table)
      cells.push_back({{"lambda1", c.lambda1},
                       {"lambda2", c.lambda2},
                       {"bic", c.bic},
                       {"df", c.df},
                       {"loglik", c.loglik},
                       {"nonzero_b", c.nonzero_b},
                       {"converged", c.converged},
                       {"failed", c.failed}});
    j["table"] = std::move(cells);
    detail::write_json(cfg, "selected.json", j);
    return kOk;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
}

/// Prints (and writes) the dataset summary: n, p, R, event count, radii.
inline int run_inspect(const RunConfig& cfg, std::ostream& os = std::cout) {
  try {
    SurvivalDataset ds;
    try {
      ds = load_csv(cfg.data_path, cfg.schema);
    } catch (const DataError& e) {
      std::cerr << "data error: " << e.what() << "\n";
      return kDataError;
    }
    json j;
    j["n"] = ds.n();
    j["p"] = ds.p();
    j["rings"] = ds.ring_count();
    j["events"] = ds.event.sum();
    j["radii"] = std::vector<double>(ds.radii.data(), ds.radii.data() + ds.ring_count());
    j["covariates"] = ds.covariate_names;
    j["strata"] = ds.strata.empty()
                      ? 1
                      : 1 + *std::max_element(ds.strata.begin(), ds.strata.end());
    os << j.dump(2) << "\n";
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
}

}  // namespace funbuffer::cli

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "funbuffer/inference.hpp"
#include "funbuffer/survdata.hpp"
#include "funbuffer/tuning.hpp"
#include "funbuffer/util.hpp"

namespace funbuffer {

enum class Scenario { I, II, III };

inline const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::I: return "I";
    case Scenario::II: return "II";
    case Scenario::III: return "III";
  }
  return "?";
}

inline Scenario scenario_from_name(const std::string& s) {
  if (s == "I" || s == "1") return Scenario::I;
  if (s == "II" || s == "2") return Scenario::II;
  if (s == "III" || s == "3") return Scenario::III;
  throw std::invalid_argument("unknown scenario: " + s);
}

/// True coefficient functions on [0,1]; zero on [0.5, 1] for II and III.
inline double truth_beta(Scenario sc, double s) {
  switch (sc) {
    case Scenario::I: return 0.0;
    case Scenario::II: return (s >= 0.0 && s < 0.5) ? 2.0 * std::sin(2.0 * M_PI * s) : 0.0;
    case Scenario::III:
      return (s >= 0.0 && s < 0.5) ? -2.0 * std::sin(M_PI * (s - 0.5)) : 0.0;
  }
  return 0.0;
}

struct ScenarioConfig {
  Scenario scenario{Scenario::II};
  int n{1000};
  double censor_fraction{0.10};
  double theta1{std::log(0.8)};
  double theta2{std::log(1.2)};
  std::uint64_t seed{1};
  /// Radii at which the generated exposure function is recorded.
  int ring_count{201};
  /// Exposure generator: cubic B-splines with 48 inner knots (52 functions),
  /// standard normal coefficients.
  int exposure_inner_knots{48};
  int pilot_draws{50000};
};

namespace detail {

inline BSplineBasis exposure_basis(const ScenarioConfig& cfg) {
  BasisSpec spec;
  spec.degree = 3;
  spec.inner_knot_count = cfg.exposure_inner_knots;
  spec.domain_lo = 0.0;
  spec.domain_hi = 1.0;
  return BSplineBasis(spec);
}

/// Linear predictor eta = int X beta from the recorded rings, by trapezoid on
/// a fine grid with the truth's half-open kink at 0.5 included.
inline double eta_functional(const ExposureFunction& x, Scenario sc,
                             const std::vector<double>& grid, const Eigen::VectorXd& w) {
  double acc = 0.0;
  for (int g = 0; g < static_cast<int>(grid.size()); ++g)
    acc += w(g) * x(grid[g]) * truth_beta(sc, grid[g]);
  return acc;
}

inline std::vector<double> eta_grid() {
  auto grid = linspace(0.0, 1.0, 2001);
  grid.push_back(0.5 - 1e-12);  // half-open indicator boundary
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

/// P(censored) = E[rho / (rho + e^eta)] for exponential censoring at rate rho
/// competing with an exponential event at rate e^eta.
inline double censor_rate_for(const Eigen::VectorXd& eta_pilot, double rho) {
  double acc = 0.0;
  for (int i = 0; i < eta_pilot.size(); ++i) acc += rho / (rho + std::exp(eta_pilot(i)));
  return acc / eta_pilot.size();
}

}  // namespace detail

/// Monte-Carlo root finding of the exponential censoring rate that yields the
/// requested censoring fraction: bisection on pilot draws of eta.
inline double calibrate_censor_rate(const ScenarioConfig& cfg) {
  if (cfg.censor_fraction <= 0.0) return 0.0;
  if (cfg.censor_fraction >= 1.0) throw std::invalid_argument("censor_fraction must be < 1");
  const BSplineBasis xbasis = detail::exposure_basis(cfg);
  std::mt19937_64 rng(mix_seed(cfg.seed, 0xC0FFEEULL));
  std::normal_distribution<double> stdnorm(0.0, 1.0);

  const auto grid = detail::eta_grid();
  const Eigen::VectorXd w = trapezoid_weights(grid);
  Eigen::MatrixXd bg = xbasis.eval_matrix(grid);  // g x 52

  Eigen::VectorXd eta(cfg.pilot_draws);
  Eigen::VectorXd coef(xbasis.size());
  Eigen::VectorXd beta_grid(static_cast<int>(grid.size()));
  for (int g = 0; g < beta_grid.size(); ++g)
    beta_grid(g) = w(g) * truth_beta(cfg.scenario, grid[g]);
  const Eigen::VectorXd proj = bg.transpose() * beta_grid;  // int B_j beta
  for (int i = 0; i < cfg.pilot_draws; ++i) {
    for (int j = 0; j < coef.size(); ++j) coef(j) = stdnorm(rng);
    const double z1 = 1.0 + 0.5 * stdnorm(rng);
    const double z2 = stdnorm(rng);
    eta(i) = coef.dot(proj) + cfg.theta1 * z1 + cfg.theta2 * z2;
  }

  double lo = 1e-10, hi = 1e6;
  for (int it = 0; it < 200; ++it) {
    const double mid = std::sqrt(lo * hi);
    if (detail::censor_rate_for(eta, mid) < cfg.censor_fraction)
      lo = mid;
    else
      hi = mid;
  }
  return std::sqrt(lo * hi);
}

/// Generates one scenario dataset: smooth random exposures recorded on the
/// ring grid, hazard exp(int X beta + theta1 Z1 + theta2 Z2) against lambda0 = 1,
/// independent exponential censoring calibrated to the target fraction.
inline SurvivalDataset generate(const ScenarioConfig& cfg, double censor_rate = -1.0) {
  if (censor_rate < 0.0) censor_rate = calibrate_censor_rate(cfg);
  const BSplineBasis xbasis = detail::exposure_basis(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  std::uniform_real_distribution<double> unif(std::numeric_limits<double>::min(), 1.0);

  SurvivalDataset ds;
  const int n = cfg.n;
  ds.time.resize(n);
  ds.event.resize(n);
  ds.covariates.resize(n, 2);
  ds.covariate_names = {"z1", "z2"};
  const auto rings = linspace(0.0, 1.0, cfg.ring_count);
  ds.radii = Eigen::Map<const Eigen::VectorXd>(rings.data(), cfg.ring_count);
  ds.exposures.resize(n, cfg.ring_count);

  const Eigen::MatrixXd ring_basis = xbasis.eval_matrix(rings);  // R x 52
  const auto grid = detail::eta_grid();
  const Eigen::VectorXd w = trapezoid_weights(grid);

  Eigen::VectorXd coef(xbasis.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < coef.size(); ++j) coef(j) = stdnorm(rng);
    ds.exposures.row(i) = (ring_basis * coef).transpose();
    const double z1 = 1.0 + 0.5 * stdnorm(rng);
    const double z2 = stdnorm(rng);
    ds.covariates(i, 0) = z1;
    ds.covariates(i, 1) = z2;

    const double eta = detail::eta_functional(ds.exposure(i), cfg.scenario, grid, w) +
                       cfg.theta1 * z1 + cfg.theta2 * z2;
    const double t_event = -std::log(unif(rng)) / std::exp(eta);
    if (censor_rate > 0.0) {
      const double t_cens = -std::log(unif(rng)) / censor_rate;
      ds.time(i) = std::min(t_event, t_cens);
      ds.event(i) = t_event <= t_cens ? 1 : 0;
    } else {
      ds.time(i) = t_event;
      ds.event(i) = 1;
    }
  }
  return ds;
}

/// IMSE of an estimated coefficient curve against the scenario truth:
/// normalized by int beta^2 for Scenarios II/III, plain integral for I.
inline double imse(const std::function<double(double)>& beta_hat_unit, Scenario sc) {
  const auto grid = detail::eta_grid();
  const Eigen::VectorXd w = trapezoid_weights(grid);
  double num = 0.0, den = 0.0;
  for (int g = 0; g < static_cast<int>(grid.size()); ++g) {
    const double truth = truth_beta(sc, grid[g]);
    const double diff = beta_hat_unit(grid[g]) - truth;
    num += w(g) * diff * diff;
    den += w(g) * truth * truth;
  }
  return sc == Scenario::I ? num : num / den;
}

struct RepRecord {
  int rep{0};
  double imse{std::numeric_limits<double>::quiet_NaN()};
  double supremum{std::numeric_limits<double>::quiet_NaN()};
  double theta1{std::numeric_limits<double>::quiet_NaN()};
  double theta2{std::numeric_limits<double>::quiet_NaN()};
  double lambda1{0.0};
  double lambda2{0.0};
  int nonzero_b{0};
  bool failed{false};
};

struct VariantSummary {
  Variant variant{Variant::SplineGbridge};
  std::vector<RepRecord> reps;
  double mean_imse{0.0}, sd_imse{0.0};
  double mean_supremum{0.0}, sd_supremum{0.0};
  double pct_bias_theta1{0.0}, ese_theta1{0.0};
  double pct_bias_theta2{0.0}, ese_theta2{0.0};
  int failures{0};
};

struct StudyConfig {
  ScenarioConfig scenario{};
  std::vector<Variant> variants{Variant::SplineGbridge};
  int n_reps{100};
  int threads{1};
  int fit_mn{26};
  int fit_degree{3};
  SelectOptions select{};
  /// Grid spec applied per replication, anchored on that replication's data.
  int grid_n1{20}, grid_n2{10};
  double grid_l1_lo{1e-4}, grid_l1_hi{1e1};
  double grid_l2_lo{1e-3}, grid_l2_hi{3e1};
  /// Smoothness grid for second-stage refits; lighter than stage one so the
  /// refit stays near-unbiased on the selected region.
  double refit_l2_lo{1e-3}, refit_l2_hi{3e-1};
};

struct ReplicationReport {
  StudyConfig config{};
  std::vector<VariantSummary> variants;
  double censor_rate{0.0};
};

namespace detail {

inline void aggregate(VariantSummary& vs, double theta1_true, double theta2_true) {
  std::vector<double> imses, sups, t1, t2;
  for (const auto& r : vs.reps) {
    if (r.failed) {
      ++vs.failures;
      continue;
    }
    imses.push_back(r.imse);
    sups.push_back(r.supremum);
    t1.push_back(r.theta1);
    t2.push_back(r.theta2);
  }
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  };
  auto sd = [&](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / (v.size() - 1));
  };
  vs.mean_imse = mean(imses);
  vs.sd_imse = sd(imses);
  vs.mean_supremum = mean(sups);
  vs.sd_supremum = sd(sups);
  vs.pct_bias_theta1 = 100.0 * (mean(t1) - theta1_true) / theta1_true;
  vs.ese_theta1 = sd(t1);
  vs.pct_bias_theta2 = 100.0 * (mean(t2) - theta2_true) / theta2_true;
  vs.ese_theta2 = sd(t2);
}

}  // namespace detail

/// Fitting basis used throughout the simulation studies (M_n = 26, d = 3 by
/// default, on the unit domain).
inline BSplineBasis study_basis(const StudyConfig& cfg) {
  BasisSpec spec;
  spec.degree = cfg.fit_degree;
  spec.inner_knot_count = cfg.fit_mn;
  spec.domain_lo = 0.0;
  spec.domain_hi = 1.0;
  return BSplineBasis(spec);
}

/// Full Monte-Carlo study: per replication, generate -> center -> design ->
/// BIC-tuned fit per variant -> metrics. Replications are embarrassingly
/// parallel with per-rep derived seeds; reports are reproducible bit-for-bit
/// from the master seed regardless of thread count.
inline ReplicationReport run_study(const StudyConfig& cfg) {
  ReplicationReport report;
  report.config = cfg;
  report.censor_rate = calibrate_censor_rate(cfg.scenario);
  const BSplineBasis basis = study_basis(cfg);
  const PenaltyMatrices pen = roughness_matrix(basis);

  report.variants.resize(cfg.variants.size());
  for (size_t v = 0; v < cfg.variants.size(); ++v) {
    report.variants[v].variant = cfg.variants[v];
    report.variants[v].reps.resize(cfg.n_reps);
  }

  parallel_for(cfg.n_reps, cfg.threads, [&](int rep) {
    ScenarioConfig sc = cfg.scenario;
    sc.seed = mix_seed(cfg.scenario.seed, static_cast<std::uint64_t>(rep));
    SurvivalDataset ds = center(generate(sc, report.censor_rate));
    const DesignedData dd = design(ds, basis);
    const TuningGrid grid = TuningGrid::make(dd, pen, cfg.grid_n1, cfg.grid_n2, cfg.grid_l1_lo,
                                             cfg.grid_l1_hi, cfg.grid_l2_lo, cfg.grid_l2_hi);
    for (size_t v = 0; v < cfg.variants.size(); ++v) {
      RepRecord rec;
      rec.rep = rep;
      try {
        SelectOptions sel = cfg.select;
        sel.threads = 1;  // parallelism lives at the replication level
        sel.solver.seed = mix_seed(sc.seed, 0x5EEDULL + v);
        const TuningReport tr = select(dd, pen, cfg.variants[v], grid, sel);
        const FitResult& fr = tr.best_fit;
        const Eigen::VectorXd bhat = fr.coefs.b;
        rec.imse = imse([&](double u) { return bhat.dot(basis.values(u)); }, sc.scenario);
        rec.supremum = select_regions(fr, basis).buffer_unit;
        rec.theta1 = fr.coefs.theta(0);
        rec.theta2 = fr.coefs.theta(1);
        rec.lambda1 = tr.selected_cell().lambda1;
        rec.lambda2 = tr.selected_cell().lambda2;
        rec.nonzero_b = fr.nonzero_b();
      } catch (const std::exception&) {
        rec.failed = true;
      }
      report.variants[v].reps[rep] = rec;
    }
  });

  for (auto& vs : report.variants)
    detail::aggregate(vs, cfg.scenario.theta1, cfg.scenario.theta2);
  return report;
}

/// Truth-region second-stage study (the Figure 2/3 design): refit on the
/// known non-null region and record beta*-hat and its SE on a fixed grid.
struct CoveragePoint {
  double s{0.0};
  double truth{0.0};
  double mean_beta{0.0};
  double ase{0.0};       // average estimated SE
  double ese{0.0};       // empirical SE of beta*-hat
  double coverage{0.0};  // fraction of reps with truth inside the 95% CI
};

struct CoverageStudy {
  std::vector<CoveragePoint> points;
  int n_reps{0};
  int failures{0};
};

inline CoverageStudy run_coverage_study(const StudyConfig& cfg, const std::vector<double>& s_grid,
                                        double region_lo = 0.0, double region_hi = 0.5) {
  const BSplineBasis basis = study_basis(cfg);
  const PenaltyMatrices pen = roughness_matrix(basis);
  const RegionSelection sel = region_from_range(basis, region_lo, region_hi);
  const double censor_rate = calibrate_censor_rate(cfg.scenario);
  const std::vector<double> l2_mults =
      logspace(cfg.refit_l2_lo, cfg.refit_l2_hi, cfg.grid_n2);  // multipliers; anchored per rep

  const int npts = static_cast<int>(s_grid.size());
  struct RepCurve {
    std::vector<double> beta, se;
    bool failed{false};
  };
  std::vector<RepCurve> curves(cfg.n_reps);

  parallel_for(cfg.n_reps, cfg.threads, [&](int rep) {
    RepCurve& rc = curves[rep];
    try {
      ScenarioConfig scc = cfg.scenario;
      scc.seed = mix_seed(cfg.scenario.seed, static_cast<std::uint64_t>(rep));
      SurvivalDataset ds = center(generate(scc, censor_rate));
      const DesignedData dd = design(ds, basis);
      std::vector<double> grid = l2_mults;
      const double scale = TuningGrid::curvature_scale(dd, pen.J);
      for (double& v : grid) v *= scale;
      const InferenceResult inf = refit(dd, pen, sel, grid, cfg.select.solver, 1);
      rc.beta.resize(npts);
      rc.se.resize(npts);
      for (int g = 0; g < npts; ++g) {
        rc.beta[g] = inf.beta_at(basis, s_grid[g]);
        rc.se[g] = std::sqrt(std::max(0.0, variance_at(inf, basis, s_grid[g])));
      }
    } catch (const std::exception&) {
      rc.failed = true;
    }
  });

  CoverageStudy out;
  out.n_reps = cfg.n_reps;
  out.points.resize(npts);
  for (int g = 0; g < npts; ++g) {
    CoveragePoint& pt = out.points[g];
    pt.s = s_grid[g];
    pt.truth = truth_beta(cfg.scenario.scenario, s_grid[g]);
    std::vector<double> betas, ses;
    int covered = 0, used = 0;
    for (const auto& rc : curves) {
      if (rc.failed) continue;
      ++used;
      betas.push_back(rc.beta[g]);
      ses.push_back(rc.se[g]);
      if (std::abs(rc.beta[g] - pt.truth) <= 1.96 * rc.se[g]) ++covered;
    }
    const double mb = std::accumulate(betas.begin(), betas.end(), 0.0) / std::max(1, used);
    pt.mean_beta = mb;
    pt.ase = std::accumulate(ses.begin(), ses.end(), 0.0) / std::max(1, used);
    double acc = 0.0;
    for (double b : betas) acc += (b - mb) * (b - mb);
    pt.ese = used > 1 ? std::sqrt(acc / (used - 1)) : 0.0;
    pt.coverage = used > 0 ? static_cast<double>(covered) / used : 0.0;
  }
  for (const auto& rc : curves) out.failures += rc.failed ? 1 : 0;
  return out;
}

}  // namespace funbuffer

#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <random>

#include "funbuffer/simulate.hpp"
#include "funbuffer/tuning.hpp"
#include "oracles.hpp"

using namespace funbuffer;

namespace {

PenaltyMatrices full_rank_pen(int ln, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> norm;
  PenaltyMatrices pen;
  pen.D.resize(ln, ln);
  for (int i = 0; i < ln; ++i)
    for (int j = 0; j < ln; ++j) pen.D(i, j) = norm(rng);
  pen.D += 2.0 * Eigen::MatrixXd::Identity(ln, ln);
  pen.J = pen.D.transpose() * pen.D;
  return pen;
}

}  // namespace

TEST_CASE("effective df equals the parameter count at lambda2 = 0") {
  const auto dd = oracle::random_design(60, 5, 2, 111);
  const PenaltyMatrices pen = full_rank_pen(5, 1);
  const FitResult fr = fit_smooth(dd, pen, 0.0);
  CHECK(fr.nonzero_b() == 5);
  CHECK(effective_df(fr, dd, pen.J, 0.0) == Catch::Approx(7.0).margin(1e-8));
}

TEST_CASE("effective df tends to the unpenalized count as lambda2 grows") {
  const auto dd = oracle::random_design(60, 5, 2, 113);
  const PenaltyMatrices pen = full_rank_pen(5, 2);  // J0 PD on the b block
  const FitResult fr = fit_smooth(dd, pen, 0.01);
  const double df = effective_df(fr, dd, pen.J, 1e12);
  CHECK(df == Catch::Approx(2.0).margin(1e-3));
}

TEST_CASE("effective df matches a dense-inverse oracle") {
  const auto dd = oracle::random_design(50, 4, 2, 127);
  const PenaltyMatrices pen = full_rank_pen(4, 3);
  const FitResult fr = fit_smooth(dd, pen, 0.02);
  const double lambda2 = 0.37;
  const double df = effective_df(fr, dd, pen.J, lambda2);

  const GradHess gh = grad_hess(dd, fr.coefs.alpha());
  Eigen::MatrixXd j0 = Eigen::MatrixXd::Zero(6, 6);
  j0.topLeftCorner(4, 4) = pen.J;
  const Eigen::MatrixXd dense =
      (gh.hess + dd.n() * lambda2 * j0).inverse() * gh.hess;
  CHECK(df == Catch::Approx(dense.trace()).margin(1e-8));
}

TEST_CASE("df is monotone non-increasing in lambda2 for a fixed active set") {
  const auto dd = oracle::random_design(60, 5, 2, 131);
  const PenaltyMatrices pen = full_rank_pen(5, 4);
  const FitResult fr = fit_smooth(dd, pen, 0.01);
  double prev = effective_df(fr, dd, pen.J, 0.0);
  for (double l2 : logspace(1e-4, 1e4, 17)) {
    const double df = effective_df(fr, dd, pen.J, l2);
    CHECK(df <= prev + 1e-10);
    prev = df;
  }
}

TEST_CASE("bic composes the likelihood and df") {
  const auto dd = oracle::random_design(60, 4, 2, 137);
  const PenaltyMatrices pen = full_rank_pen(4, 5);
  const FitResult fr = fit_smooth(dd, pen, 0.05);
  const double lambda2 = 0.05;
  const double expected = -2.0 * logpl(dd, fr.coefs.alpha()) +
                          std::log(static_cast<double>(dd.n())) *
                              effective_df(fr, dd, pen.J, lambda2);
  CHECK(bic(fr, dd, pen.J, lambda2) == Catch::Approx(expected).epsilon(1e-12));

  SECTION("formula arithmetic: equal likelihood, df 5 vs 3, n = 100") {
    const double ll = -12.3;
    const double b5 = -2.0 * ll + std::log(100.0) * 5.0;
    const double b3 = -2.0 * ll + std::log(100.0) * 3.0;
    CHECK(b5 - b3 == Catch::Approx(2.0 * std::log(100.0)));
  }
  SECTION("formula arithmetic: df = 0, l = -10 gives 20") {
    CHECK(-2.0 * (-10.0) + std::log(100.0) * 0.0 == Catch::Approx(20.0));
  }
}

TEST_CASE("select collapses the grid per variant") {
  const auto dd = oracle::random_design(50, 5, 2, 139);
  const PenaltyMatrices pen = full_rank_pen(5, 6);
  TuningGrid grid;
  grid.lambda1 = {1e-3, 1e-2, 1e-1};
  grid.lambda2 = {1e-4, 1e-2};
  SECTION("spline: lambda2 axis only") {
    const TuningReport rep = select(dd, pen, Variant::Spline, grid);
    CHECK(rep.table.size() == 2);
    for (const auto& c : rep.table) CHECK(c.lambda1 == 0.0);
  }
  SECTION("lasso: lambda1 axis only") {
    const TuningReport rep = select(dd, pen, Variant::Lasso, grid);
    CHECK(rep.table.size() == 3);
    for (const auto& c : rep.table) CHECK(c.lambda2 == 0.0);
  }
  SECTION("gbridge: lambda1 axis only") {
    const TuningReport rep = select(dd, pen, Variant::Gbridge, grid);
    CHECK(rep.table.size() == 3);
  }
}

TEST_CASE("selection attains the minimum BIC with ties toward larger lambda1") {
  const auto dd = oracle::random_design(40, 6, 2, 149);
  const PenaltyMatrices pen = full_rank_pen(6, 7);
  TuningGrid grid;
  // top lambda1 values all force b = 0, so their BICs tie exactly
  grid.lambda1 = {1e-4, 5.0, 10.0, 20.0};
  grid.lambda2 = {1e-6};
  const TuningReport rep = select(dd, pen, Variant::SplineGbridge, grid);
  double min_bic = std::numeric_limits<double>::infinity();
  for (const auto& c : rep.table)
    if (!c.failed) min_bic = std::min(min_bic, c.bic);
  CHECK(rep.selected_cell().bic == min_bic);
  int ties = 0;
  for (const auto& c : rep.table)
    if (!c.failed && c.bic == min_bic) ++ties;
  if (ties > 1) {
    double max_l1_at_min = 0.0;
    for (const auto& c : rep.table)
      if (!c.failed && c.bic == min_bic) max_l1_at_min = std::max(max_l1_at_min, c.lambda1);
    CHECK(rep.selected_cell().lambda1 == max_l1_at_min);
  }
}

TEST_CASE("select is invariant to grid ordering") {
  const auto dd = oracle::random_design(50, 5, 2, 151);
  const PenaltyMatrices pen = full_rank_pen(5, 8);
  TuningGrid fwd;
  fwd.lambda1 = {1e-3, 1e-2, 1e-1, 1.0};
  fwd.lambda2 = {1e-5, 1e-3};
  TuningGrid rev = fwd;
  std::reverse(rev.lambda1.begin(), rev.lambda1.end());
  std::reverse(rev.lambda2.begin(), rev.lambda2.end());
  const TuningReport a = select(dd, pen, Variant::SplineGbridge, fwd);
  const TuningReport b = select(dd, pen, Variant::SplineGbridge, rev);
  CHECK(a.selected_cell().lambda1 == b.selected_cell().lambda1);
  CHECK(a.selected_cell().lambda2 == b.selected_cell().lambda2);
}

TEST_CASE("degenerate n = 20 dataset still yields a fully populated report") {
  const auto dd = oracle::random_design(20, 6, 2, 157);
  const PenaltyMatrices pen = full_rank_pen(6, 9);
  const TuningGrid grid = TuningGrid::make(dd, pen, 6, 4);
  const TuningReport rep = select(dd, pen, Variant::SplineGbridge, grid);
  CHECK(rep.table.size() == 24);
  for (const auto& c : rep.table) CHECK((c.failed || std::isfinite(c.bic)));
  CHECK(rep.selected >= 0);
}

TEST_CASE("warm and cold starts select the same pair on the acceptance seed") {
  ScenarioConfig sc;
  sc.scenario = Scenario::II;
  sc.n = 250;
  sc.seed = 20260810;
  const SurvivalDataset ds = center(generate(sc));
  BasisSpec spec;
  spec.degree = 3;
  spec.inner_knot_count = 12;
  const BSplineBasis basis(spec);
  const PenaltyMatrices pen = roughness_matrix(basis);
  const DesignedData dd = design(ds, basis);
  const TuningGrid grid = TuningGrid::make(dd, pen, 8, 4);
  SelectOptions warm;
  warm.warm_start = true;
  warm.threads = 2;
  SelectOptions cold = warm;
  cold.warm_start = false;
  const TuningReport a = select(dd, pen, Variant::SplineGbridge, grid, warm);
  const TuningReport b = select(dd, pen, Variant::SplineGbridge, grid, cold);
  CHECK(a.selected_cell().lambda1 == b.selected_cell().lambda1);
  CHECK(a.selected_cell().lambda2 == b.selected_cell().lambda2);
}

TEST_CASE("BIC selection beats fixed mid-grid tuning on IMSE in most replications") {
  // Monte-Carlo harness oracle: Scenario II replicates, reduced scale.
  const int reps = 100;
  BasisSpec spec;
  spec.degree = 3;
  spec.inner_knot_count = 12;
  const BSplineBasis basis(spec);
  const PenaltyMatrices pen = roughness_matrix(basis);

  std::atomic<int> wins{0}, ties{0};
  parallel_for(reps, 2, [&](int rep) {
    ScenarioConfig sc;
    sc.scenario = Scenario::II;
    sc.n = 300;
    sc.seed = mix_seed(424242, rep);
    const SurvivalDataset ds = center(generate(sc));
    const DesignedData dd = design(ds, basis);
    const TuningGrid grid = TuningGrid::make(dd, pen, 10, 5);
    const TuningReport rep_bic = select(dd, pen, Variant::SplineGbridge, grid);

    PenaltyConfig mid;
    mid.variant = Variant::SplineGbridge;
    mid.lambda1 = grid.lambda1[grid.lambda1.size() / 2];
    mid.lambda2 = grid.lambda2[grid.lambda2.size() / 2];
    SolverOptions mopts;
    mopts.n_starts = 1;
    const FitResult fix = fit(dd, pen, mid, mopts);

    const Eigen::VectorXd b_bic = rep_bic.best_fit.coefs.b;
    const Eigen::VectorXd b_fix = fix.coefs.b;
    const double imse_bic =
        imse([&](double u) { return b_bic.dot(basis.values(u)); }, Scenario::II);
    const double imse_fix =
        imse([&](double u) { return b_fix.dot(basis.values(u)); }, Scenario::II);
    if (imse_bic < imse_fix) ++wins;
    if (imse_bic == imse_fix) ++ties;
  });
  INFO("wins=" << wins.load() << " ties=" << ties.load());
  CHECK(wins.load() + ties.load() >= reps / 2);
}

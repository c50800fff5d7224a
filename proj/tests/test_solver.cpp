#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "funbuffer/basis.hpp"
#include "funbuffer/solver.hpp"
#include "oracles.hpp"

using namespace funbuffer;

namespace {

PenaltyMatrices empty_pen(int ln) {
  PenaltyMatrices pen;
  pen.J = Eigen::MatrixXd::Zero(ln, ln);
  pen.D = Eigen::MatrixXd::Zero(0, ln);
  return pen;
}

PenaltyMatrices random_pen(int ln, std::uint64_t seed, int rank) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> norm;
  PenaltyMatrices pen;
  pen.D.resize(rank, ln);
  for (int i = 0; i < rank; ++i)
    for (int j = 0; j < ln; ++j) pen.D(i, j) = norm(rng);
  pen.J = pen.D.transpose() * pen.D;
  return pen;
}

}  // namespace

TEST_CASE("theta-only smooth fit matches the reference Newton solver") {
  auto dd = oracle::random_design(60, 0, 3, 61);
  const FitResult fr = fit_smooth(dd, empty_pen(0), 0.0);
  REQUIRE(fr.converged);
  const Eigen::VectorXd ref = oracle::newton_cox(dd);
  CHECK((fr.coefs.theta - ref).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("huge lambda2 pushes b into the affine nullspace of J") {
  const auto dd = oracle::random_design(80, 6, 1, 67);
  BasisSpec spec;
  spec.degree = 3;
  spec.inner_knot_count = dd.ln - spec.degree - 1;
  const PenaltyMatrices pen = roughness_matrix(BSplineBasis(spec));
  const FitResult fr = fit_smooth(dd, pen, 1e7);
  // projection of b onto the row space of D (the complement of the nullspace)
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(pen.D, Eigen::ComputeThinV);
  const Eigen::VectorXd proj = svd.matrixV().transpose() * fr.coefs.b;
  CHECK(proj.norm() < 1e-4 * std::max(1.0, fr.coefs.b.norm()));
  CHECK(std::abs(fr.coefs.b.dot(pen.J * fr.coefs.b)) < 1e-8);
}

TEST_CASE("smooth fit objective trace is non-increasing") {
  const auto dd = oracle::random_design(70, 5, 2, 71);
  const PenaltyMatrices pen = random_pen(5, 3, 3);
  const FitResult fr = fit_smooth(dd, pen, 0.05);
  REQUIRE(fr.trace.size() >= 2);
  for (size_t i = 1; i < fr.trace.size(); ++i) CHECK(fr.trace[i] <= fr.trace[i - 1] + 1e-12);
}

TEST_CASE("group weight formulas") {
  SECTION("zeta at gamma = 0.5 is lambda1^2 / 4") {
    CHECK(detail::group_bridge_zeta(1.0, 0.5) == Catch::Approx(0.25));
    CHECK(detail::group_bridge_zeta(2.0, 0.5) == Catch::Approx(1.0));
    CHECK(detail::group_bridge_zeta(0.3, 0.5) == Catch::Approx(0.25 * 0.09));
  }
  SECTION("direct evaluation at unit group norm") {
    // gamma = 0.5, lambda1 = 1: zeta = 1/4, mu_j = ((1-g)/(g zeta))^g * 1 = 2,
    // and each group's xi contribution is mu^{1-1/g} = 1/2.
    Eigen::VectorXd b(4);
    b << 0.5, 0.5, 0.0, 0.0;  // degree 1: groups {0,1},{1,2},{2,3}; ||b_{A_0}||_1 = 1
    const GroupWeights w = update_group_weights(b, 1.0, 0.5, 1);
    REQUIRE(w.mu.size() == 3);
    CHECK(w.mu(0) == Catch::Approx(2.0));
    CHECK(w.xi(0) == Catch::Approx(0.5));  // only group 0 contains coefficient 0
  }
  SECTION("zero groups freeze their members") {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(5);
    const GroupWeights w = update_group_weights(b, 1.0, 0.5, 2);
    CHECK(w.mu.cwiseAbs().maxCoeff() == 0.0);
    for (int k = 0; k < 5; ++k) CHECK(std::isinf(w.xi(k)));
  }
  SECTION("profiled mu recovers the bridge penalty value") {
    // min_mu mu^{1-1/g} c + zeta mu = lambda1 c^g at mu = mu_j(b)
    const double lambda1 = 0.7, gamma = 0.5, c = 1.9;
    const double zeta = detail::group_bridge_zeta(lambda1, gamma);
    Eigen::VectorXd b(2);
    b << c, 0.0;
    const GroupWeights w = update_group_weights(b, lambda1, gamma, 1);
    const double mu = w.mu(0);
    const double value = std::pow(mu, 1.0 - 1.0 / gamma) * c + zeta * mu;
    CHECK(value == Catch::Approx(lambda1 * std::pow(c, gamma)).epsilon(1e-12));
  }
}

TEST_CASE("coordinate descent with zero weights solves the normal equations") {
  std::mt19937_64 rng(73);
  std::normal_distribution<double> norm;
  const int rows = 40, ln = 5, p = 2, m = ln + p;
  Eigen::MatrixXd vbar(rows, m);
  Eigen::VectorXd ybar(rows);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < m; ++j) vbar(i, j) = norm(rng);
    ybar(i) = norm(rng);
  }
  const Eigen::VectorXd xi = Eigen::VectorXd::Zero(ln);
  const Eigen::VectorXd sol =
      weighted_lasso_cd(ybar, vbar, xi, 20, ln, Eigen::VectorXd::Zero(m));
  const Eigen::VectorXd direct = (vbar.transpose() * vbar).ldlt().solve(vbar.transpose() * ybar);
  CHECK((sol - direct).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("orthonormal design recovers the soft-threshold closed form") {
  const int n = 36, ln = 6;
  // scaled identity: Vbar^T Vbar / n = I
  Eigen::MatrixXd vbar = std::sqrt(static_cast<double>(n)) * Eigen::MatrixXd::Identity(ln, ln);
  std::mt19937_64 rng(79);
  std::normal_distribution<double> norm;
  Eigen::VectorXd ybar(ln);
  for (int k = 0; k < ln; ++k) ybar(k) = norm(rng);
  Eigen::VectorXd xi(ln);
  for (int k = 0; k < ln; ++k) xi(k) = 0.05 * (k + 1);
  const Eigen::VectorXd sol = weighted_lasso_cd(ybar, vbar, xi, n, ln, Eigen::VectorXd::Zero(ln));
  for (int k = 0; k < ln; ++k) {
    const double z = vbar.col(k).dot(ybar) / n;
    const double expected = std::abs(z) <= xi(k) ? 0.0 : std::copysign(std::abs(z) - xi(k), z);
    CHECK(sol(k) == Catch::Approx(expected).margin(1e-12));
  }
}

TEST_CASE("huge weights zero out b and leave theta least squares") {
  std::mt19937_64 rng(83);
  std::normal_distribution<double> norm;
  const int rows = 50, ln = 4, p = 2;
  Eigen::MatrixXd vbar(rows, ln + p);
  Eigen::VectorXd ybar(rows);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < ln + p; ++j) vbar(i, j) = norm(rng);
    ybar(i) = norm(rng);
  }
  const Eigen::VectorXd xi = Eigen::VectorXd::Constant(ln, 1e12);
  const Eigen::VectorXd sol =
      weighted_lasso_cd(ybar, vbar, xi, rows, ln, Eigen::VectorXd::Zero(ln + p));
  CHECK(sol.head(ln).cwiseAbs().maxCoeff() == 0.0);
  const Eigen::MatrixXd zcols = vbar.rightCols(p);
  const Eigen::VectorXd theta_ls = (zcols.transpose() * zcols).ldlt().solve(zcols.transpose() * ybar);
  CHECK((sol.tail(p) - theta_ls).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("gbridge at lambda1 = 0 equals the lasso variant at lambda1 = 0") {
  const auto dd = oracle::random_design(50, 5, 2, 89);
  const PenaltyMatrices pen = empty_pen(5);
  SolverOptions opts;
  opts.n_starts = 1;
  PenaltyConfig gb;
  gb.variant = Variant::Gbridge;
  gb.lambda1 = 0.0;
  PenaltyConfig la;
  la.variant = Variant::Lasso;
  la.lambda1 = 0.0;
  const FitResult a = fit(dd, pen, gb, opts);
  const FitResult b = fit(dd, pen, la, opts);
  CHECK((a.coefs.alpha() - b.coefs.alpha()).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("degree-0 group bridge with gamma near 1 approximates the lasso penalty") {
  std::mt19937_64 rng(97);
  std::normal_distribution<double> norm;
  Eigen::VectorXd b(6);
  for (int k = 0; k < 6; ++k) b(k) = norm(rng);
  PenaltyConfig bridge;
  bridge.variant = Variant::Gbridge;
  bridge.lambda1 = 0.8;
  bridge.gamma = 1.0 - 1e-6;
  const double p_bridge = detail::sparsity_penalty(b, bridge, 0);
  const double p_lasso = bridge.lambda1 * b.cwiseAbs().sum();
  CHECK(p_bridge == Catch::Approx(p_lasso).epsilon(1e-4));
}

TEST_CASE("sparse fit drives exact zeros and a monotone objective") {
  const auto dd = oracle::random_design(80, 8, 2, 101);
  const PenaltyMatrices pen = random_pen(8, 5, 6);
  PenaltyConfig cfg;
  cfg.variant = Variant::SplineGbridge;
  cfg.lambda1 = 0.3;
  cfg.lambda2 = 0.01;
  SolverOptions opts;
  opts.n_starts = 3;
  opts.seed = 42;
  const FitResult fr = fit(dd, pen, cfg, opts);
  for (size_t i = 1; i < fr.trace.size(); ++i) CHECK(fr.trace[i] <= fr.trace[i - 1] + 1e-12);
  // a lambda1 this large relative to the data scale should produce zeros
  CHECK(fr.nonzero_b() < dd.ln);
  for (int k = 0; k < dd.ln; ++k) {
    if (fr.coefs.b(k) != 0.0) continue;
    CHECK(std::signbit(fr.coefs.b(k)) == false);  // exact +0.0, not a tiny residual
  }
}

TEST_CASE("multi-start fits are bit-reproducible under a fixed seed") {
  const auto dd = oracle::random_design(60, 6, 2, 103);
  const PenaltyMatrices pen = random_pen(6, 7, 4);
  PenaltyConfig cfg;
  cfg.variant = Variant::SplineGbridge;
  cfg.lambda1 = 0.05;
  cfg.lambda2 = 0.001;
  SolverOptions opts;
  opts.n_starts = 4;
  opts.seed = 7;
  const FitResult a = fit(dd, pen, cfg, opts);
  const FitResult b = fit(dd, pen, cfg, opts);
  REQUIRE(a.coefs.b.size() == b.coefs.b.size());
  for (int k = 0; k < a.coefs.b.size(); ++k) CHECK(a.coefs.b(k) == b.coefs.b(k));
  for (int k = 0; k < a.coefs.theta.size(); ++k) CHECK(a.coefs.theta(k) == b.coefs.theta(k));
}

TEST_CASE("smooth fit flags non-convergence and returns the last iterate") {
  const auto dd = oracle::random_design(60, 5, 2, 107);
  const PenaltyMatrices pen = random_pen(5, 9, 3);
  SolverOptions opts;
  opts.max_smooth_iters = 1;  // cannot converge in one step
  const FitResult fr = fit_smooth(dd, pen, 0.01, opts);
  CHECK_FALSE(fr.converged);
  CHECK(fr.coefs.alpha().allFinite());
  CHECK(fr.outer_iters == 1);
}

TEST_CASE("an unfactorizable Hessian raises a diagnostic error") {
  Eigen::MatrixXd bad = Eigen::MatrixXd::Constant(3, 3, std::numeric_limits<double>::quiet_NaN());
  Eigen::LLT<Eigen::MatrixXd> llt;
  CHECK_THROWS_WITH(detail::jittered_llt(bad, llt),
                    Catch::Matchers::ContainsSubstring("lambda2"));
}

TEST_CASE("lasso variant rejects a smoothness penalty") {
  PenaltyConfig cfg;
  cfg.variant = Variant::Lasso;
  cfg.lambda1 = 0.1;
  cfg.lambda2 = 0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

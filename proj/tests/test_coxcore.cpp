#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "funbuffer/coxcore.hpp"
#include "oracles.hpp"

using namespace funbuffer;

TEST_CASE("null model reduces to -sum log |risk set|") {
  // distinct times, single stratum, all eta = 0
  auto dd = oracle::random_design(12, 2, 1, 21);
  for (int i = 0; i < dd.n(); ++i) dd.time(i) = 1.0 + 0.1 * i;
  detail::build_order(dd);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(dd.dim());
  double expected = 0.0;
  for (int i = 0; i < dd.n(); ++i) {
    if (dd.event(i) != 1) continue;
    int at_risk = 0;
    for (int j = 0; j < dd.n(); ++j)
      if (dd.time(j) >= dd.time(i)) ++at_risk;
    expected -= std::log(static_cast<double>(at_risk));
  }
  CHECK(logpl(dd, zero) == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("n = 2 closed form") {
  DesignedData dd;
  dd.ln = 0;
  dd.p = 1;
  dd.degree = 0;
  dd.X.resize(2, 1);
  dd.X << 0.7, -0.3;
  dd.time.resize(2);
  dd.time << 2.0, 1.0;
  dd.event.resize(2);
  dd.event << 1, 1;
  detail::build_order(dd);
  Eigen::VectorXd alpha(1);
  alpha << 1.3;
  const double eta1 = 0.7 * 1.3, eta2 = -0.3 * 1.3;
  const double expected =
      eta1 - std::log(std::exp(eta1)) + eta2 - std::log(std::exp(eta1) + std::exp(eta2));
  CHECK(logpl(dd, alpha) == Catch::Approx(expected).epsilon(1e-14));
}

TEST_CASE("adding a constant to all eta leaves the likelihood unchanged") {
  const auto dd = oracle::random_design(25, 3, 2, 29, 1, 0.2);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> norm;
  Eigen::VectorXd alpha(dd.dim());
  for (int k = 0; k < alpha.size(); ++k) alpha(k) = 0.3 * norm(rng);
  const Eigen::VectorXd eta = dd.X * alpha;
  const double base = logpl_from_eta(dd, eta);
  const double shifted = logpl_from_eta(dd, (eta.array() + 11.7).matrix());
  CHECK(shifted == Catch::Approx(base).epsilon(1e-12));
}

TEST_CASE("logpl matches the direct-sum oracle with ties and strata") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> norm;
  for (int trial = 0; trial < 10; ++trial) {
    const auto dd = oracle::random_design(30, 3, 2, 100 + trial, trial % 3 + 1, 0.3);
    Eigen::VectorXd alpha(dd.dim());
    for (int k = 0; k < alpha.size(); ++k) alpha(k) = 0.4 * norm(rng);
    CHECK(logpl(dd, alpha) == Catch::Approx(oracle::naive_logpl(dd, alpha)).epsilon(1e-10));
  }
}

TEST_CASE("likelihood is invariant to order-preserving time relabeling") {
  auto dd = oracle::random_design(30, 3, 2, 37, 2, 0.25);
  Eigen::VectorXd alpha = Eigen::VectorXd::Constant(dd.dim(), 0.2);
  const double base = logpl(dd, alpha);
  for (int i = 0; i < dd.n(); ++i) dd.time(i) = std::exp(dd.time(i));  // monotone map
  detail::build_order(dd);
  CHECK(logpl(dd, alpha) == Catch::Approx(base).epsilon(1e-12));
}

TEST_CASE("gradient matches central finite differences on 20 random instances") {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> norm;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 20 + (trial % 4) * 10;  // n <= 50
    const auto dd = oracle::random_design(n, 4, 2, 200 + trial, trial % 2 + 1, 0.2);
    Eigen::VectorXd alpha(dd.dim());
    for (int k = 0; k < alpha.size(); ++k) alpha(k) = 0.3 * norm(rng);
    const GradHess gh = grad_hess(dd, alpha);
    const Eigen::VectorXd fd = -oracle::fd_gradient(dd, alpha);  // l_tilde = -l
    const double rel = (gh.grad - fd).norm() / std::max(1.0, fd.norm());
    CHECK(rel < 1e-6);
  }
}

TEST_CASE("Hessian matches the direct-sum oracle and is PSD") {
  std::mt19937_64 rng(43);
  std::normal_distribution<double> norm;
  for (int trial = 0; trial < 5; ++trial) {
    const auto dd = oracle::random_design(35, 3, 2, 300 + trial, 1, 0.2);
    Eigen::VectorXd alpha(dd.dim());
    for (int k = 0; k < alpha.size(); ++k) alpha(k) = 0.3 * norm(rng);
    const GradHess gh = grad_hess(dd, alpha);
    Eigen::VectorXd g_ref;
    Eigen::MatrixXd h_ref;
    oracle::naive_derivs(dd, alpha, g_ref, h_ref);
    CHECK((gh.grad - g_ref).lpNorm<Eigen::Infinity>() < 1e-9 * std::max(1.0, g_ref.norm()));
    CHECK((gh.hess - h_ref).cwiseAbs().maxCoeff() < 1e-9 * std::max(1.0, h_ref.norm()));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gh.hess);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-8 * gh.hess.trace());
  }
}

TEST_CASE("surrogate reproduces gradient and Hessian at the expansion point") {
  const auto dd = oracle::random_design(40, 4, 2, 51);
  Eigen::VectorXd alpha0 = Eigen::VectorXd::Constant(dd.dim(), 0.1);
  const Eigen::MatrixXd d_factor(0, dd.ln);
  const QuadSurrogate q = surrogate(dd, alpha0, 0.0, d_factor);
  const GradHess gh = grad_hess(dd, alpha0);

  // gradient of 1/2 ||Y - V alpha||^2 at alpha0
  const Eigen::VectorXd surr_grad = q.V.transpose() * (q.V * alpha0 - q.Y);
  CHECK((surr_grad - gh.grad).lpNorm<Eigen::Infinity>() < 1e-8 * std::max(1.0, gh.grad.norm()));
  CHECK(((q.V.transpose() * q.V) - gh.hess).cwiseAbs().maxCoeff() <
        1e-8 * std::max(1.0, gh.hess.norm()));

  SECTION("lambda2 = 0 leaves the augmentation empty") {
    CHECK(q.Vbar.rows() == q.V.rows());
    CHECK((q.Vbar - q.V).cwiseAbs().maxCoeff() == 0.0);
    CHECK((q.Ybar - q.Y).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("augmented rows encode the smoothness penalty") {
  const auto dd = oracle::random_design(40, 5, 2, 53);
  Eigen::MatrixXd d_factor(3, dd.ln);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> norm;
  for (int i = 0; i < d_factor.rows(); ++i)
    for (int j = 0; j < d_factor.cols(); ++j) d_factor(i, j) = norm(rng);
  const Eigen::MatrixXd j_mat = d_factor.transpose() * d_factor;
  const double lambda2 = 0.37;
  const Eigen::VectorXd alpha0 = Eigen::VectorXd::Constant(dd.dim(), 0.05);
  const QuadSurrogate q = surrogate(dd, alpha0, lambda2, d_factor);
  CHECK(q.Vbar.rows() == q.V.rows() + 3);
  // extra rows are zero on the theta block
  CHECK(q.Vbar.bottomRightCorner(3, dd.p).cwiseAbs().maxCoeff() == 0.0);

  std::normal_distribution<double> n2;
  Eigen::VectorXd alpha(dd.dim());
  for (int k = 0; k < alpha.size(); ++k) alpha(k) = n2(rng);
  const double lhs = 0.5 / dd.n() * (q.Ybar - q.Vbar * alpha).squaredNorm();
  const double rhs = 0.5 / dd.n() * (q.Y - q.V * alpha).squaredNorm() +
                     lambda2 * alpha.head(dd.ln).dot(j_mat * alpha.head(dd.ln));
  CHECK(lhs == Catch::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("argmin of the unpenalized surrogate is one Newton step") {
  const auto dd = oracle::random_design(45, 4, 2, 59);
  Eigen::VectorXd alpha0 = Eigen::VectorXd::Constant(dd.dim(), 0.15);
  const QuadSurrogate q = surrogate(dd, alpha0, 0.0, Eigen::MatrixXd(0, dd.ln));
  const Eigen::VectorXd argmin =
      (q.V.transpose() * q.V).ldlt().solve(q.V.transpose() * q.Y);

  Eigen::VectorXd g_ref;
  Eigen::MatrixXd h_ref;
  oracle::naive_derivs(dd, alpha0, g_ref, h_ref);
  const Eigen::VectorXd newton = alpha0 - h_ref.ldlt().solve(g_ref);
  CHECK((argmin - newton).lpNorm<Eigen::Infinity>() < 1e-8);
}

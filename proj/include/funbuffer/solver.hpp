#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "funbuffer/coxcore.hpp"

namespace funbuffer {

enum class Variant { Spline, Lasso, Gbridge, SplineLasso, SplineGbridge };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Spline: return "spline";
    case Variant::Lasso: return "lasso";
    case Variant::Gbridge: return "gbridge";
    case Variant::SplineLasso: return "spline-lasso";
    case Variant::SplineGbridge: return "spline-gbridge";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  for (Variant v : {Variant::Spline, Variant::Lasso, Variant::Gbridge, Variant::SplineLasso,
                    Variant::SplineGbridge})
    if (s == variant_name(v)) return v;
  throw std::invalid_argument("unknown variant: " + s);
}

inline bool variant_has_smoothness(Variant v) {
  return v == Variant::Spline || v == Variant::SplineLasso || v == Variant::SplineGbridge;
}
inline bool variant_has_sparsity(Variant v) { return v != Variant::Spline; }
inline bool variant_is_bridge(Variant v) {
  return v == Variant::Gbridge || v == Variant::SplineGbridge;
}

/// Penalty configuration. The variant pins which of lambda1/lambda2 are live:
/// Spline has no sparsity penalty, Lasso/Gbridge no smoothness penalty.
struct PenaltyConfig {
  Variant variant{Variant::SplineGbridge};
  double lambda1{0.0};
  double lambda2{0.0};
  double gamma{0.5};

  void validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0) throw std::invalid_argument("negative tuning parameter");
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0,1)");
    if (!variant_has_sparsity(variant) && lambda1 != 0.0)
      throw std::invalid_argument("spline variant requires lambda1 = 0");
    if (!variant_has_smoothness(variant) && lambda2 != 0.0)
      throw std::invalid_argument("lasso/gbridge variants require lambda2 = 0");
  }
};

struct SolverOptions {
  double outer_tol{1e-6};
  int max_outer{100};
  double cd_tol{1e-8};
  int max_cd_sweeps{10000};
  double smooth_tol{1e-7};
  int max_smooth_iters{50};
  int max_halvings{20};
  int n_starts{5};
  std::uint64_t seed{0};
  /// Warm-start point; when absent the Step-1 smooth fit initializes.
  std::optional<Eigen::VectorXd> init{};
};

struct FitResult {
  Coefs coefs;
  Variant variant{Variant::SplineGbridge};
  double lambda1{0.0};
  double lambda2{0.0};
  double gamma{0.5};
  bool converged{false};
  int outer_iters{0};
  double objective{std::numeric_limits<double>::quiet_NaN()};  // penalized -L_n at solution
  std::vector<double> trace;                                   // objective per outer iteration
  Eigen::VectorXd mu;  // final group weights (bridge variants)
  Eigen::VectorXd xi;  // final per-coefficient weights
  double max_jitter{0.0};
  int best_start{0};

  int nonzero_b() const {
    int c = 0;
    for (int k = 0; k < coefs.b.size(); ++k)
      if (coefs.b(k) != 0.0) ++c;
    return c;
  }
};

namespace detail {

inline double group_bridge_zeta(double lambda1, double gamma) {
  return std::pow(lambda1, 1.0 / (1.0 - gamma)) * std::pow(gamma, gamma / (1.0 - gamma)) *
         (1.0 - gamma);
}

/// L1 norms of the overlapping groups A_j = {j, ..., j+d}, j = 0..M_n.
inline Eigen::VectorXd group_norms(const Eigen::VectorXd& b, int degree) {
  const int groups = static_cast<int>(b.size()) - degree;
  Eigen::VectorXd out(groups);
  for (int j = 0; j < groups; ++j) out(j) = b.segment(j, degree + 1).cwiseAbs().sum();
  return out;
}

inline double sparsity_penalty(const Eigen::VectorXd& b, const PenaltyConfig& cfg, int degree) {
  if (!variant_has_sparsity(cfg.variant) || cfg.lambda1 == 0.0) return 0.0;
  if (variant_is_bridge(cfg.variant)) {
    const Eigen::VectorXd norms = group_norms(b, degree);
    double acc = 0.0;
    for (int j = 0; j < norms.size(); ++j) acc += std::pow(norms(j), cfg.gamma);
    return cfg.lambda1 * acc;
  }
  return cfg.lambda1 * b.cwiseAbs().sum();
}

}  // namespace detail

/// Penalized negative objective -L_n(alpha) of the estimator: the quantity
/// the outer iteration drives downhill and the multi-start comparator.
inline double penalized_objective(const DesignedData& data, const Eigen::MatrixXd& j_mat,
                                  const PenaltyConfig& cfg, const Eigen::VectorXd& alpha) {
  const Eigen::VectorXd b = alpha.head(data.ln);
  double obj = -logpl(data, alpha) / data.n();
  obj += detail::sparsity_penalty(b, cfg, data.degree);
  if (cfg.lambda2 > 0.0 && data.ln > 0) obj += cfg.lambda2 * b.dot(j_mat * b);
  return obj;
}

/// Step-2 weights of the group bridge iteration:
///   mu_j = ((1-gamma)/(gamma zeta))^gamma ||b_{A_j}||_1^gamma,
///   xi_k = sum_{j: k in A_j} mu_j^(1-1/gamma),
/// with zeta = lambda1^{1/(1-gamma)} gamma^{gamma/(1-gamma)} (1-gamma).
/// A zero group norm makes xi infinite for its members, which freezes those
/// coefficients at zero for the rest of the iteration.
struct GroupWeights {
  Eigen::VectorXd mu;  // M_n + 1
  Eigen::VectorXd xi;  // L_n, +inf on frozen coordinates
};

inline GroupWeights update_group_weights(const Eigen::VectorXd& b, double lambda1, double gamma,
                                         int degree) {
  if (!(lambda1 > 0.0)) throw std::invalid_argument("update_group_weights: lambda1 must be > 0");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0,1)");
  const double zeta = detail::group_bridge_zeta(lambda1, gamma);
  const Eigen::VectorXd norms = detail::group_norms(b, degree);
  const int groups = static_cast<int>(norms.size());
  const int ln = static_cast<int>(b.size());
  GroupWeights w;
  w.mu.resize(groups);
  const double base = (1.0 - gamma) / (gamma * zeta);
  for (int j = 0; j < groups; ++j) w.mu(j) = std::pow(base, gamma) * std::pow(norms(j), gamma);
  w.xi = Eigen::VectorXd::Zero(ln);
  const double expo = 1.0 - 1.0 / gamma;  // negative
  for (int k = 0; k < ln; ++k) {
    const int j_lo = std::max(0, k - degree);
    const int j_hi = std::min(groups - 1, k);
    for (int j = j_lo; j <= j_hi; ++j) {
      if (w.mu(j) == 0.0) {
        w.xi(k) = std::numeric_limits<double>::infinity();
        break;
      }
      w.xi(k) += std::pow(w.mu(j), expo);
    }
  }
  return w;
}

/// Cyclic coordinate descent for
///   min (1/2n)||Ybar - Vbar alpha||^2 + sum_k xi_k |b_k|
/// with exact soft-threshold updates on the b-block (threshold n xi_k under
/// the 1/2n scaling) and exact least-squares updates on the theta-block.
/// Zeros are exact. Runs in the Gram form, so cost per sweep is O(m^2).
inline Eigen::VectorXd weighted_lasso_cd(const Eigen::VectorXd& ybar, const Eigen::MatrixXd& vbar,
                                         const Eigen::VectorXd& xi, int n, int ln,
                                         const Eigen::VectorXd& init, const SolverOptions& opts = {}) {
  const int m = static_cast<int>(vbar.cols());
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(m, m);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(vbar.transpose());
  gram = gram.selfadjointView<Eigen::Lower>();
  const Eigen::VectorXd c = vbar.transpose() * ybar;

  Eigen::VectorXd alpha = init;
  for (int k = 0; k < ln; ++k)
    if (std::isinf(xi(k))) alpha(k) = 0.0;
  Eigen::VectorXd q = gram * alpha;

  for (int sweep = 0; sweep < opts.max_cd_sweeps; ++sweep) {
    double max_delta = 0.0;
    for (int k = 0; k < m; ++k) {
      const bool penalized = k < ln;
      if (penalized && std::isinf(xi(k))) continue;
      const double gkk = gram(k, k);
      if (gkk <= 0.0) continue;
      const double old = alpha(k);
      const double z = c(k) - q(k) + gkk * old;
      double next;
      if (penalized) {
        const double thr = static_cast<double>(n) * xi(k);
        const double az = std::abs(z);
        next = az <= thr ? 0.0 : std::copysign(az - thr, z) / gkk;
      } else {
        next = z / gkk;
      }
      if (next != old) {
        q.noalias() += gram.col(k) * (next - old);
        alpha(k) = next;
        max_delta = std::max(max_delta, std::abs(next - old));
      }
    }
    if (max_delta < opts.cd_tol) break;
  }
  return alpha;
}

/// Step 1: smoothness-only penalized fit by iterating the closed-form ridge
/// solve alpha = (V^T V + 2 n lambda2 J*)^{-1} V^T Y, with a step-halving
/// damping that keeps l_tilde/n + lambda2 b^T J b non-increasing.
inline FitResult fit_smooth(const DesignedData& data, const PenaltyMatrices& pen, double lambda2,
                            const SolverOptions& opts = {}) {
  const int m = data.dim();
  const double n = static_cast<double>(data.n());
  const Eigen::MatrixXd jstar =
      data.ln > 0 ? pen.jstar(data.p) : Eigen::MatrixXd::Zero(m, m);
  PenaltyConfig cfg;
  cfg.variant = Variant::Spline;
  cfg.lambda2 = lambda2;

  FitResult res;
  res.variant = Variant::Spline;
  res.lambda2 = lambda2;

  Eigen::VectorXd alpha = opts.init.value_or(Eigen::VectorXd::Zero(m));
  double obj = penalized_objective(data, pen.J, cfg, alpha);
  res.trace.push_back(obj);

  Eigen::LLT<Eigen::MatrixXd> llt;
  for (int it = 0; it < opts.max_smooth_iters; ++it) {
    ++res.outer_iters;
    const GradHess gh = grad_hess(data, alpha);
    Eigen::MatrixXd a = gh.hess;
    if (lambda2 > 0.0 && data.ln > 0) a += (2.0 * n * lambda2) * jstar;
    res.max_jitter = std::max(res.max_jitter, detail::jittered_llt(a, llt));
    Eigen::VectorXd grad_pen = gh.grad;
    if (lambda2 > 0.0 && data.ln > 0) grad_pen += (2.0 * n * lambda2) * (jstar * alpha);
    const Eigen::VectorXd step = llt.solve(grad_pen);

    double t = 1.0;
    Eigen::VectorXd cand;
    double cand_obj = obj;
    bool accepted = false;
    for (int h = 0; h <= opts.max_halvings; ++h) {
      cand = alpha - t * step;
      cand_obj = penalized_objective(data, pen.J, cfg, cand);
      if (std::isfinite(cand_obj) && cand_obj <= obj) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;  // stalled at a numerical floor
    const double delta = (cand - alpha).lpNorm<Eigen::Infinity>();
    alpha = cand;
    obj = cand_obj;
    res.trace.push_back(obj);
    if (delta < opts.smooth_tol) {
      res.converged = true;
      break;
    }
  }
  res.coefs = Coefs::from_alpha(alpha, data.ln);
  res.objective = obj;
  return res;
}

namespace detail {

inline Eigen::VectorXd coefficient_weights(const Eigen::VectorXd& b, const PenaltyConfig& cfg,
                                           int degree, Eigen::VectorXd* mu_out) {
  if (cfg.lambda1 == 0.0) {  // no sparsity penalty: plain (ridge-)Newton steps
    if (mu_out) mu_out->resize(0);
    return Eigen::VectorXd::Zero(b.size());
  }
  if (variant_is_bridge(cfg.variant)) {
    GroupWeights w = update_group_weights(b, cfg.lambda1, cfg.gamma, degree);
    if (mu_out) *mu_out = w.mu;
    return w.xi;
  }
  if (mu_out) mu_out->resize(0);
  return Eigen::VectorXd::Constant(b.size(), cfg.lambda1);
}

struct OuterRun {
  Eigen::VectorXd alpha;
  double objective;
  bool converged;
  int iters;
  std::vector<double> trace;
  Eigen::VectorXd mu, xi;
  double max_jitter;
};

inline OuterRun run_outer(const DesignedData& data, const PenaltyMatrices& pen,
                          const PenaltyConfig& cfg, const Eigen::VectorXd& start,
                          const SolverOptions& opts) {
  OuterRun run;
  run.alpha = start;
  run.converged = false;
  run.iters = 0;
  run.max_jitter = 0.0;
  run.objective = penalized_objective(data, pen.J, cfg, run.alpha);
  run.trace.push_back(run.objective);

  for (int m_it = 0; m_it < opts.max_outer; ++m_it) {
    ++run.iters;
    run.xi = coefficient_weights(run.alpha.head(data.ln), cfg, data.degree, &run.mu);
    QuadSurrogate surr = surrogate(data, run.alpha, cfg.lambda2, pen.D);
    run.max_jitter = std::max(run.max_jitter, surr.jitter);
    const Eigen::VectorXd cd =
        weighted_lasso_cd(surr.Ybar, surr.Vbar, run.xi, data.n(), data.ln, run.alpha, opts);

    // Accept the surrogate solution only if the true penalized objective does
    // not increase; otherwise halve the step toward the previous iterate.
    Eigen::VectorXd cand = cd;
    double cand_obj = penalized_objective(data, pen.J, cfg, cand);
    double t = 1.0;
    int halvings = 0;
    while ((!std::isfinite(cand_obj) || cand_obj > run.objective) && halvings < opts.max_halvings) {
      t *= 0.5;
      cand = run.alpha + t * (cd - run.alpha);
      cand_obj = penalized_objective(data, pen.J, cfg, cand);
      ++halvings;
    }
    if (!std::isfinite(cand_obj) || cand_obj > run.objective) {
      run.converged = true;  // no descent left at line-search resolution
      break;
    }
    const double delta = (cand - run.alpha).lpNorm<Eigen::Infinity>();
    run.alpha = cand;
    run.objective = cand_obj;
    run.trace.push_back(cand_obj);
    if (delta < opts.outer_tol) {
      run.converged = true;
      break;
    }
  }
  return run;
}

}  // namespace detail

/// Penalized estimator driver. Spline solves the smoothness-only problem;
/// the sparse variants iterate reweighting (bridge) or fixed-threshold
/// (lasso) coordinate descent on the quadratic surrogate, with multi-start
/// initialization around the Step-1 fit.
inline FitResult fit(const DesignedData& data, const PenaltyMatrices& pen,
                     const PenaltyConfig& cfg, const SolverOptions& opts = {}) {
  cfg.validate();
  if (cfg.variant == Variant::Spline) {
    FitResult res = fit_smooth(data, pen, cfg.lambda2, opts);
    res.variant = Variant::Spline;
    return res;
  }

  Eigen::VectorXd base;
  double base_jitter = 0.0;
  if (opts.init.has_value()) {
    base = *opts.init;
  } else {
    SolverOptions sopts = opts;
    sopts.init.reset();
    const FitResult smooth = fit_smooth(data, pen, cfg.lambda2, sopts);
    base = smooth.coefs.alpha();
    base_jitter = smooth.max_jitter;
  }

  const int n_starts = std::max(1, opts.n_starts);
  std::optional<detail::OuterRun> best;
  int best_start = 0;
  for (int s = 0; s < n_starts; ++s) {
    Eigen::VectorXd start = base;
    const double sd = 0.5 * base.lpNorm<Eigen::Infinity>();
    if (s > 0 && sd > 0.0) {
      std::mt19937_64 rng(mix_seed(opts.seed, static_cast<std::uint64_t>(s)));
      std::normal_distribution<double> noise(0.0, sd);
      for (int k = 0; k < start.size(); ++k) start(k) += noise(rng);
    }
    detail::OuterRun run = detail::run_outer(data, pen, cfg, start, opts);
    if (!best || run.objective < best->objective) {
      best = std::move(run);
      best_start = s;
    }
  }

  FitResult res;
  res.coefs = Coefs::from_alpha(best->alpha, data.ln);
  res.variant = cfg.variant;
  res.lambda1 = cfg.lambda1;
  res.lambda2 = cfg.lambda2;
  res.gamma = cfg.gamma;
  res.converged = best->converged;
  res.outer_iters = best->iters;
  res.objective = best->objective;
  res.trace = best->trace;
  res.mu = best->mu;
  res.xi = best->xi;
  res.max_jitter = std::max(base_jitter, best->max_jitter);
  res.best_start = best_start;
  return res;
}

}  // namespace funbuffer

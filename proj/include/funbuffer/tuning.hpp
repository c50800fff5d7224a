#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <vector>

#include "funbuffer/solver.hpp"
#include "funbuffer/util.hpp"

namespace funbuffer {

/// Candidate grids for (lambda1, lambda2). lambda1 is log-spaced and anchored
/// at the null-fit gradient scale so the largest value forces b = 0. lambda2
/// is anchored at the curvature ratio tr(H)/(n tr(J)) so the multipliers
/// sweep the effective-df discount from negligible to strong without
/// collapsing onto the affine kernel of J.
struct TuningGrid {
  std::vector<double> lambda1;
  std::vector<double> lambda2;

  static double gradient_scale(const DesignedData& data) {
    const GradHess gh = grad_hess(data, Eigen::VectorXd::Zero(data.dim()));
    return gh.grad.lpNorm<Eigen::Infinity>() / data.n();
  }

  static double curvature_scale(const DesignedData& data, const Eigen::MatrixXd& j_mat) {
    const double trj = j_mat.size() > 0 ? j_mat.trace() : 0.0;
    if (!(trj > 0.0)) return gradient_scale(data);
    const GradHess gh = grad_hess(data, Eigen::VectorXd::Zero(data.dim()));
    return gh.hess.trace() / (data.n() * trj);
  }

  static TuningGrid make(const DesignedData& data, const PenaltyMatrices& pen, int n1 = 20,
                         int n2 = 10, double l1_lo = 1e-4, double l1_hi = 1e1,
                         double l2_lo = 1e-3, double l2_hi = 3e1) {
    const double s1 = gradient_scale(data);
    const double s2 = curvature_scale(data, pen.J);
    TuningGrid g;
    g.lambda1 = logspace(l1_lo * s1, l1_hi * s1, n1);
    g.lambda2 = logspace(l2_lo * s2, l2_hi * s2, n2);
    return g;
  }

  void normalize() {
    auto fix = [](std::vector<double>& v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
      if (v.empty() || v.front() < 0.0) throw std::invalid_argument("invalid tuning grid");
    };
    fix(lambda1);
    fix(lambda2);
  }
};

/// Effective number of parameters df = tr[(H0 + n lambda2 J0)^{-1} H0],
/// where H0 is the information at alpha-hat restricted to the nonzero b
/// coordinates plus the (unpenalized) theta coordinates, and J0 the matching
/// submatrix of J* (zero on theta rows).
inline double effective_df(const FitResult& fit, const DesignedData& data,
                           const Eigen::MatrixXd& j_mat, double lambda2) {
  std::vector<int> keep;
  for (int k = 0; k < data.ln; ++k)
    if (fit.coefs.b(k) != 0.0) keep.push_back(k);
  const int q = static_cast<int>(keep.size());
  for (int k = 0; k < data.p; ++k) keep.push_back(data.ln + k);
  const int m0 = static_cast<int>(keep.size());
  if (m0 == 0) return 0.0;

  const GradHess gh = grad_hess(data, fit.coefs.alpha());
  Eigen::MatrixXd h0(m0, m0), j0 = Eigen::MatrixXd::Zero(m0, m0);
  for (int a = 0; a < m0; ++a)
    for (int b = 0; b < m0; ++b) h0(a, b) = gh.hess(keep[a], keep[b]);
  for (int a = 0; a < q; ++a)
    for (int b = 0; b < q; ++b) j0(a, b) = j_mat(keep[a], keep[b]);

  Eigen::MatrixXd lhs = h0;
  if (lambda2 > 0.0) lhs += (static_cast<double>(data.n()) * lambda2) * j0;
  Eigen::LLT<Eigen::MatrixXd> llt;
  detail::jittered_llt(lhs, llt);
  return llt.solve(h0).trace();
}

/// BIC(lambda1, lambda2) = -2 l_n(alpha-hat) + log(n) df(lambda1, lambda2).
inline double bic(const FitResult& fit, const DesignedData& data, const Eigen::MatrixXd& j_mat,
                  double lambda2) {
  const double ll = logpl(data, fit.coefs.alpha());
  const double df = effective_df(fit, data, j_mat, lambda2);
  return -2.0 * ll + std::log(static_cast<double>(data.n())) * df;
}

struct TuningCell {
  double lambda1{0.0};
  double lambda2{0.0};
  double bic{std::numeric_limits<double>::infinity()};
  double df{0.0};
  double loglik{0.0};
  int nonzero_b{0};
  bool converged{false};
  bool failed{false};
};

struct TuningReport {
  std::vector<TuningCell> table;
  int selected{-1};
  FitResult best_fit;
  Variant variant{Variant::SplineGbridge};

  const TuningCell& selected_cell() const { return table.at(selected); }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    out << "lambda1,lambda2,bic,df,loglik,nonzero_b,converged,failed\n";
    out << std::setprecision(10);
    for (const auto& c : table)
      out << c.lambda1 << ',' << c.lambda2 << ',' << c.bic << ',' << c.df << ',' << c.loglik
          << ',' << c.nonzero_b << ',' << (c.converged ? 1 : 0) << ',' << (c.failed ? 1 : 0)
          << '\n';
  }
};

struct SelectOptions {
  SolverOptions solver{};
  int threads{1};
  bool warm_start{true};
  int grid_starts{1};  // starts per grid cell (warm-started cells need few)
  double gamma{0.5};
};

namespace detail {

inline TuningCell evaluate_cell(const DesignedData& data, const PenaltyMatrices& pen,
                                PenaltyConfig cfg, const SelectOptions& sopts,
                                const std::optional<Eigen::VectorXd>& init, FitResult* fit_out) {
  TuningCell cell;
  cell.lambda1 = cfg.lambda1;
  cell.lambda2 = cfg.lambda2;
  try {
    SolverOptions fo = sopts.solver;
    fo.n_starts = sopts.grid_starts;
    fo.init = init;
    FitResult fr = cfg.variant == Variant::Spline ? fit_smooth(data, pen, cfg.lambda2, fo)
                                                  : fit(data, pen, cfg, fo);
    cell.df = effective_df(fr, data, pen.J, cfg.lambda2);
    cell.loglik = logpl(data, fr.coefs.alpha());
    cell.bic = -2.0 * cell.loglik + std::log(static_cast<double>(data.n())) * cell.df;
    cell.nonzero_b = fr.nonzero_b();
    cell.converged = fr.converged;
    if (fit_out) *fit_out = std::move(fr);
  } catch (const NumericalError&) {
    cell.failed = true;
    cell.bic = std::numeric_limits<double>::infinity();
  }
  return cell;
}

}  // namespace detail

/// Exhaustive BIC grid search. Rows (fixed lambda2) are independent and run
/// in parallel; within a row the lambda1 path is walked from the largest
/// value down, warm-starting each fit from its neighbor. Ties break toward
/// larger lambda1, then larger lambda2.
inline TuningReport select(const DesignedData& data, const PenaltyMatrices& pen, Variant variant,
                           TuningGrid grid, const SelectOptions& sopts = {}) {
  grid.normalize();
  if (!variant_has_sparsity(variant)) grid.lambda1 = {0.0};
  if (!variant_has_smoothness(variant)) grid.lambda2 = {0.0};
  const int n1 = static_cast<int>(grid.lambda1.size());
  const int n2 = static_cast<int>(grid.lambda2.size());

  TuningReport report;
  report.variant = variant;
  report.table.assign(n1 * n2, {});
  std::vector<FitResult> fits(n1 * n2);

  parallel_for(n2, sopts.threads, [&](int row) {
    const double l2 = grid.lambda2[row];
    std::optional<Eigen::VectorXd> warm;
    try {
      SolverOptions fo = sopts.solver;
      fo.init.reset();
      warm = fit_smooth(data, pen, l2, fo).coefs.alpha();
    } catch (const NumericalError&) {
      warm.reset();
    }
    const std::optional<Eigen::VectorXd> step1 = warm;
    for (int c = n1 - 1; c >= 0; --c) {  // largest lambda1 first
      PenaltyConfig cfg;
      cfg.variant = variant;
      cfg.lambda1 = variant_has_sparsity(variant) ? grid.lambda1[c] : 0.0;
      cfg.lambda2 = variant_has_smoothness(variant) ? l2 : 0.0;
      cfg.gamma = sopts.gamma;
      const int idx = row * n1 + c;
      const auto& init = sopts.warm_start ? warm : step1;
      report.table[idx] = detail::evaluate_cell(data, pen, cfg, sopts, init, &fits[idx]);
      // Exact zeros are absorbing for the bridge reweighting, so the warm
      // start refills them from the Step-1 fit and lets the next cell's own
      // thresholding decide.
      if (!report.table[idx].failed && sopts.warm_start) {
        Eigen::VectorXd next = fits[idx].coefs.alpha();
        if (step1)
          for (int k = 0; k < data.ln; ++k)
            if (next(k) == 0.0) next(k) = (*step1)(k);
        warm = next;
      }
    }
  });

  // min BIC; ties toward larger lambda1 then larger lambda2
  int best = -1;
  for (int row = 0; row < n2; ++row) {
    for (int c = 0; c < n1; ++c) {
      const int idx = row * n1 + c;
      const auto& cell = report.table[idx];
      if (cell.failed) continue;
      if (best < 0 || cell.bic < report.table[best].bic ||
          (cell.bic == report.table[best].bic &&
           (cell.lambda1 > report.table[best].lambda1 ||
            (cell.lambda1 == report.table[best].lambda1 &&
             cell.lambda2 > report.table[best].lambda2)))) {
        best = idx;
      }
    }
  }
  if (best < 0) throw NumericalError("tuning: every grid cell failed");
  report.selected = best;
  report.best_fit = std::move(fits[best]);
  return report;
}

}  // namespace funbuffer

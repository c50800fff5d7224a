#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "funbuffer/basis.hpp"
#include "funbuffer/tuning.hpp"

namespace funbuffer {

/// Non-null inter-knot intervals selected from the exact-zero structure of a
/// sparse fit. Interval j is null iff b_j = ... = b_{j+d} are all exactly
/// zero (local support). The buffer distance is the supremum of the union.
struct RegionSelection {
  std::vector<int> intervals;  // I_0, ascending interval indices (0-based)
  std::vector<int> active;     // A_s, ascending basis indices
  double buffer_unit{0.0};     // sup of the non-null region, 0 if empty

  bool empty() const { return intervals.empty(); }

  /// Union of selected intervals merged into maximal disjoint spans (unit scale).
  std::vector<std::pair<double, double>> spans(const BSplineBasis& basis) const {
    std::vector<std::pair<double, double>> out;
    const auto& breaks = basis.breakpoints();
    for (int j : intervals) {
      const double lo = breaks[j], hi = breaks[j + 1];
      if (!out.empty() && out.back().second == lo)
        out.back().second = hi;
      else
        out.emplace_back(lo, hi);
    }
    return out;
  }
};

inline RegionSelection select_regions(const Eigen::VectorXd& b, const BSplineBasis& basis) {
  const int d = basis.degree();
  RegionSelection sel;
  std::vector<bool> in_active(basis.size(), false);
  for (int j = 0; j < basis.interval_count(); ++j) {
    bool nonnull = false;
    for (int k = j; k <= j + d; ++k) nonnull = nonnull || b(k) != 0.0;
    if (nonnull) {
      sel.intervals.push_back(j);
      for (int k = j; k <= j + d; ++k) in_active[k] = true;
      sel.buffer_unit = basis.breakpoints()[j + 1];
    }
  }
  for (int k = 0; k < basis.size(); ++k)
    if (in_active[k]) sel.active.push_back(k);
  return sel;
}

inline RegionSelection select_regions(const FitResult& fit, const BSplineBasis& basis) {
  return select_regions(fit.coefs.b, basis);
}

/// Selection covering a given unit-scale range: the intervals whose
/// intersection with (lo, hi) has positive length. Used for the
/// "given the true non-null areas" studies.
inline RegionSelection region_from_range(const BSplineBasis& basis, double lo_unit,
                                         double hi_unit) {
  RegionSelection sel;
  std::vector<bool> in_active(basis.size(), false);
  const int d = basis.degree();
  const auto& breaks = basis.breakpoints();
  for (int j = 0; j < basis.interval_count(); ++j) {
    if (std::min(hi_unit, breaks[j + 1]) - std::max(lo_unit, breaks[j]) > 1e-12) {
      sel.intervals.push_back(j);
      for (int k = j; k <= j + d; ++k) in_active[k] = true;
      sel.buffer_unit = breaks[j + 1];
    }
  }
  for (int k = 0; k < basis.size(); ++k)
    if (in_active[k]) sel.active.push_back(k);
  return sel;
}

/// Simultaneous diagonalization of symmetric PD H and PSD P: R with
/// R^T H R = I and R^T P R = D. Columns are ordered so that the p smallest
/// (structurally zero) eigenvalues sit in the trailing block and the leading
/// q diagonal entries pi_1 <= ... <= pi_q form the increasing Pi block.
struct SimDiag {
  Eigen::MatrixXd R;
  Eigen::VectorXd pi;  // q leading diagonal entries of D
  int q{0}, p{0};
};

inline SimDiag simdiag(const Eigen::MatrixXd& h, const Eigen::MatrixXd& p_mat, int q, int p) {
  Eigen::LLT<Eigen::MatrixXd> llt;
  detail::jittered_llt(h, llt);
  const Eigen::MatrixXd l_inv =
      llt.matrixL().solve(Eigen::MatrixXd::Identity(h.rows(), h.cols()));
  Eigen::MatrixXd mid = l_inv * p_mat * l_inv.transpose();
  mid = 0.5 * (mid + mid.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(mid);  // ascending eigenvalues

  SimDiag out;
  out.q = q;
  out.p = p;
  const int m = q + p;
  Eigen::MatrixXd qcols(m, m);
  // leading block: the q largest eigenvalues in increasing order; the p
  // smallest (structural zeros of P) go last
  qcols.leftCols(q) = eig.eigenvectors().middleCols(p, q);
  qcols.rightCols(p) = eig.eigenvectors().leftCols(p);
  out.R = l_inv.transpose() * qcols;
  out.pi = eig.eigenvalues().segment(p, q).cwiseMax(0.0);
  return out;
}

/// Second-stage refit on the selected region plus its variance machinery.
struct InferenceResult {
  RegionSelection selection;
  Eigen::VectorXd b;      // refit spline coefficients on A_s
  Eigen::VectorXd theta;  // scalar effects
  double lambda2{0.0};    // smoothness parameter selected for the refit
  int n{0};
  Eigen::MatrixXd info;  // per-observation information at the refit, (q+p)^2
  SimDiag diag;
  Eigen::MatrixXd r11;  // q x q: spline rows of the Pi-block columns
  Eigen::MatrixXd r12;  // q x p: spline rows of the zero-block columns
  bool refit_converged{false};
  double refit_bic{std::numeric_limits<double>::quiet_NaN()};

  bool has_region() const { return !selection.empty(); }

  /// beta*-hat(s) at unit coordinate u (0 outside the selected region).
  double beta_at(const BSplineBasis& basis, double u) const {
    if (!has_region()) return 0.0;
    const Eigen::VectorXd vals = basis.values(u);
    double acc = 0.0;
    for (int k = 0; k < static_cast<int>(selection.active.size()); ++k)
      acc += b(k) * vals(selection.active[k]);
    return acc;
  }

  bool contains(const BSplineBasis& basis, double u) const {
    const int j = basis.interval_of(u);
    return std::binary_search(selection.intervals.begin(), selection.intervals.end(), j);
  }
};

/// Penalized smoothness-only refit (Eq.-(7) style) on the column-restricted
/// design; lambda2 re-selected by the same BIC criterion over the grid.
inline InferenceResult refit(const DesignedData& data, const PenaltyMatrices& pen,
                             const RegionSelection& sel, const std::vector<double>& lambda2_grid,
                             const SolverOptions& opts = {}, int threads = 1) {
  InferenceResult res;
  res.selection = sel;
  res.n = data.n();

  const int q = static_cast<int>(sel.active.size());
  const int p = data.p;
  DesignedData sub = data.restrict_columns(sel.active);
  PenaltyMatrices subpen;
  if (q > 0) {
    subpen.J.resize(q, q);
    for (int a = 0; a < q; ++a)
      for (int c = 0; c < q; ++c) subpen.J(a, c) = pen.J(sel.active[a], sel.active[c]);
  } else {
    subpen.J.resize(0, 0);
  }
  subpen.D.resize(0, q);

  TuningGrid grid;
  grid.lambda2 = (lambda2_grid.empty() || q == 0) ? std::vector<double>{0.0} : lambda2_grid;
  grid.lambda1 = {0.0};
  SelectOptions sopts;
  sopts.solver = opts;
  sopts.threads = threads;
  TuningReport rep = select(sub, subpen, Variant::Spline, grid, sopts);

  res.b = rep.best_fit.coefs.b;
  res.theta = rep.best_fit.coefs.theta;
  res.lambda2 = rep.selected_cell().lambda2;
  res.refit_converged = rep.best_fit.converged;
  res.refit_bic = rep.selected_cell().bic;

  const GradHess gh = grad_hess(sub, rep.best_fit.coefs.alpha());
  res.info = gh.hess / static_cast<double>(data.n());
  Eigen::MatrixXd p_mat = Eigen::MatrixXd::Zero(q + p, q + p);
  if (q > 0) p_mat.topLeftCorner(q, q) = subpen.J;
  res.diag = simdiag(res.info, p_mat, q, p);
  res.r11 = res.diag.R.topLeftCorner(q, q);
  res.r12 = res.diag.R.topRightCorner(q, p);
  return res;
}

/// Pointwise variance of beta*-hat(s):
/// Var(s) = (1/n) [ sum_l psi_l(s)^2 + sum_nu phi_nu(s)^2 / (1 + lambda2 pi_nu)^2 ],
/// psi from the unpenalized block (R12), phi from the Pi block (R11).
inline double variance_at(const InferenceResult& res, const BSplineBasis& basis, double u) {
  const int q = static_cast<int>(res.selection.active.size());
  const int p = static_cast<int>(res.theta.size());
  if (q == 0) return 0.0;
  const Eigen::VectorXd all = basis.values(u);
  Eigen::VectorXd bvals(q);
  for (int k = 0; k < q; ++k) bvals(k) = all(res.selection.active[k]);
  double acc = 0.0;
  for (int l = 0; l < p; ++l) {
    const double psi = res.r12.col(l).dot(bvals);
    acc += psi * psi;
  }
  for (int nu = 0; nu < q; ++nu) {
    const double phi = res.r11.col(nu).dot(bvals);
    const double denom = 1.0 + res.lambda2 * res.diag.pi(nu);
    acc += phi * phi / (denom * denom);
  }
  return acc / res.n;
}

struct CurvePoint {
  double s{0.0};  // physical coordinate
  double beta{0.0};
  double se{0.0};
  double lo{0.0};
  double hi{0.0};
};

/// Estimated curve with pointwise 95% CIs on the selected region, reported in
/// physical units (values scale by 1/domain_length under the affine map).
inline std::vector<CurvePoint> variance_curve(const InferenceResult& res,
                                              const BSplineBasis& basis,
                                              int points_per_interval = 20) {
  std::vector<CurvePoint> out;
  const double scale = 1.0 / basis.domain_length();
  for (const auto& [lo, hi] : res.selection.spans(basis)) {
    const int pts = std::max(
        2, static_cast<int>(std::lround((hi - lo) * basis.interval_count() * points_per_interval)));
    for (double u : linspace(lo, hi, pts)) {
      CurvePoint pt;
      pt.s = basis.to_phys(u);
      pt.beta = res.beta_at(basis, u) * scale;
      pt.se = std::sqrt(std::max(0.0, variance_at(res, basis, u))) * scale;
      pt.lo = pt.beta - 1.96 * pt.se;
      pt.hi = pt.beta + 1.96 * pt.se;
      out.push_back(pt);
    }
  }
  return out;
}

struct CumulativeEffect {
  bool has_region{false};
  double estimate{0.0};  // int_{S_s} beta*-hat(s) ds, invariant under rescaling
  double variance{0.0};
  double lo{0.0};
  double hi{0.0};

  double hazard_ratio(double increment) const { return std::exp(increment * estimate); }
  double hazard_ratio_lo(double increment) const { return std::exp(increment * lo); }
  double hazard_ratio_hi(double increment) const { return std::exp(increment * hi); }
};

/// Cumulative effect over the non-null region with its variance
/// (1/n)[ sum |psi0_l|^2 + sum |phi0_nu|^2 / (1 + lambda2 pi_nu)^2 ],
/// psi0/phi0 the integrals of psi/phi over S_s. The region is a union of
/// whole inter-knot intervals, so per-interval Gauss-Legendre integrates the
/// basis exactly.
inline CumulativeEffect cumulative_effect(const InferenceResult& res, const BSplineBasis& basis) {
  CumulativeEffect out;
  if (!res.has_region()) return out;
  out.has_region = true;
  const int q = static_cast<int>(res.selection.active.size());
  const int p = static_cast<int>(res.theta.size());

  const int npts = basis.degree() / 2 + 1;  // exact for polynomials of degree d
  std::vector<double> gl_x, gl_w;
  gauss_legendre(npts, gl_x, gl_w);
  const auto& breaks = basis.breakpoints();
  Eigen::VectorXd bvals0 = Eigen::VectorXd::Zero(q);  // int_{S_s} B_u(s) ds per active u
  Eigen::VectorXd all(basis.size());
  for (int j : res.selection.intervals) {
    const double half = 0.5 * (breaks[j + 1] - breaks[j]);
    const double mid = 0.5 * (breaks[j + 1] + breaks[j]);
    for (int g = 0; g < npts; ++g) {
      basis.eval_all(mid + half * gl_x[g], all);
      for (int k = 0; k < q; ++k) bvals0(k) += half * gl_w[g] * all(res.selection.active[k]);
    }
  }
  const double est = bvals0.dot(res.b);

  double var = 0.0;
  for (int l = 0; l < p; ++l) {
    const double psi0 = res.r12.col(l).dot(bvals0);
    var += psi0 * psi0;
  }
  for (int nu = 0; nu < q; ++nu) {
    const double phi0 = res.r11.col(nu).dot(bvals0);
    const double denom = 1.0 + res.lambda2 * res.diag.pi(nu);
    var += phi0 * phi0 / (denom * denom);
  }
  var /= res.n;

  out.estimate = est;
  out.variance = var;
  const double se = std::sqrt(std::max(0.0, var));
  out.lo = est - 1.96 * se;
  out.hi = est + 1.96 * se;
  return out;
}

}  // namespace funbuffer

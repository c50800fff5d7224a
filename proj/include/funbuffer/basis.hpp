#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "funbuffer/util.hpp"

namespace funbuffer {

/// B-spline basis description. The basis lives on the physical interval
/// [domain_lo, domain_hi]; internally everything is computed on [0,1] and
/// curve values are converted back by the affine chain rule at output time.
struct BasisSpec {
  int degree{3};
  int inner_knot_count{26};
  double domain_lo{0.0};
  double domain_hi{1.0};
  /// Optional explicit inner knots in physical units (size inner_knot_count).
  /// Empty means equally spaced.
  std::vector<double> inner_knots{};

  int basis_count() const { return inner_knot_count + degree + 1; }

  void validate() const {
    if (degree < 1) throw std::invalid_argument("BasisSpec: degree must be >= 1");
    if (inner_knot_count < 1) throw std::invalid_argument("BasisSpec: need at least one inner knot");
    if (!(domain_lo < domain_hi)) throw std::invalid_argument("BasisSpec: empty domain");
    if (!inner_knots.empty()) {
      if (static_cast<int>(inner_knots.size()) != inner_knot_count)
        throw std::invalid_argument("BasisSpec: inner_knots size != inner_knot_count");
      double prev = domain_lo;
      for (double k : inner_knots) {
        if (!(k > prev)) throw std::invalid_argument("BasisSpec: knots not strictly increasing");
        prev = k;
      }
      if (!(inner_knots.back() < domain_hi))
        throw std::invalid_argument("BasisSpec: inner knots must lie inside the domain");
    }
  }
};

/// Evaluates all L_n = M_n + d + 1 basis functions and their derivatives via
/// the de Boor recursion on a clamped knot vector. Immutable after
/// construction; safe to share across threads.
class BSplineBasis {
 public:
  explicit BSplineBasis(BasisSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const int d = spec_.degree;
    const int m = spec_.inner_knot_count;
    breaks_.resize(m + 2);
    breaks_.front() = 0.0;
    breaks_.back() = 1.0;
    for (int i = 1; i <= m; ++i) {
      breaks_[i] = spec_.inner_knots.empty()
                       ? static_cast<double>(i) / (m + 1)
                       : to_unit(spec_.inner_knots[i - 1]);
    }
    knots_.assign(d + 1, 0.0);
    knots_.insert(knots_.end(), breaks_.begin() + 1, breaks_.end() - 1);
    knots_.insert(knots_.end(), d + 1, 1.0);
  }

  int size() const { return spec_.basis_count(); }  // L_n
  int degree() const { return spec_.degree; }
  int interval_count() const { return spec_.inner_knot_count + 1; }  // M_n + 1
  const BasisSpec& spec() const { return spec_; }

  double domain_lo() const { return spec_.domain_lo; }
  double domain_hi() const { return spec_.domain_hi; }
  double domain_length() const { return spec_.domain_hi - spec_.domain_lo; }
  double to_unit(double s) const { return (s - spec_.domain_lo) / domain_length(); }
  double to_phys(double u) const { return spec_.domain_lo + u * domain_length(); }

  /// Breakpoints kappa_0..kappa_{M_n+1} in unit scale.
  const std::vector<double>& breakpoints() const { return breaks_; }

  /// Index of the inter-knot interval containing u (0..M_n); u clamped to [0,1].
  int interval_of(double u) const {
    if (u >= 1.0) return interval_count() - 1;
    if (u <= 0.0) return 0;
    int i = static_cast<int>(std::upper_bound(breaks_.begin(), breaks_.end(), u) - breaks_.begin()) - 1;
    return std::clamp(i, 0, interval_count() - 1);
  }

  /// Writes all L_n basis values (deriv = 0) or derivative values at unit
  /// coordinate u. Entries outside the d+1 local functions are exact zeros.
  void eval_all(double u, Eigen::Ref<Eigen::VectorXd> out, int deriv = 0) const {
    if (out.size() != size()) throw std::invalid_argument("eval_all: bad output size");
    out.setZero();
    const int d = spec_.degree;
    const int span = interval_of(u) + d;
    if (deriv == 0) {
      double local[kMaxDegree + 1];
      basis_funs(span, u, local);
      for (int j = 0; j <= d; ++j) out(span - d + j) = local[j];
    } else {
      Eigen::MatrixXd ders;
      ders_basis_funs(span, u, deriv, ders);
      for (int j = 0; j <= d; ++j) out(span - d + j) = ders(deriv, j);
    }
  }

  Eigen::VectorXd values(double u) const {
    Eigen::VectorXd out(size());
    eval_all(u, out);
    return out;
  }

  /// Dense evaluation matrix (grid.size() x L_n) of values or derivatives.
  Eigen::MatrixXd eval_matrix(const std::vector<double>& grid, int deriv = 0) const {
    Eigen::MatrixXd out(static_cast<int>(grid.size()), size());
    Eigen::VectorXd row(size());
    for (int g = 0; g < static_cast<int>(grid.size()); ++g) {
      eval_all(grid[g], row, deriv);
      out.row(g) = row;
    }
    return out;
  }

  /// Unit-scale quadrature grid: `resolution` equally spaced points with the
  /// knots inserted, sorted and deduplicated.
  std::vector<double> quadrature_grid(int resolution = kDesignGridPoints) const {
    std::vector<double> grid;
    grid.reserve(resolution + breaks_.size());
    const double step = 1.0 / (resolution - 1);
    for (int i = 0; i < resolution; ++i) grid.push_back(std::min(1.0, i * step));
    for (double b : breaks_) grid.push_back(b);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    return grid;
  }

  static constexpr int kMaxDegree = 16;
  // Fine enough that the O(h^2) trapezoid error of the exposure integrals
  // stays below 1e-8 on the unit domain.
  static constexpr int kDesignGridPoints = 10001;

 private:
  // NURBS-book A2.2: values of the d+1 functions B_{span-d..span} at u.
  void basis_funs(int span, double u, double* n_out) const {
    const int d = spec_.degree;
    double left[kMaxDegree + 1], right[kMaxDegree + 1];
    n_out[0] = 1.0;
    for (int j = 1; j <= d; ++j) {
      left[j] = u - knots_[span + 1 - j];
      right[j] = knots_[span + j] - u;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        const double denom = right[r + 1] + left[j - r];
        const double temp = denom != 0.0 ? n_out[r] / denom : 0.0;
        n_out[r] = saved + right[r + 1] * temp;
        saved = left[j - r] * temp;
      }
      n_out[j] = saved;
    }
  }

  // NURBS-book A2.3: derivatives 0..nders of the local functions at u.
  void ders_basis_funs(int span, double u, int nders, Eigen::MatrixXd& ders) const {
    const int d = spec_.degree;
    nders = std::min(nders, d + 1);
    Eigen::MatrixXd ndu(d + 1, d + 1);
    double left[kMaxDegree + 1], right[kMaxDegree + 1];
    ndu(0, 0) = 1.0;
    for (int j = 1; j <= d; ++j) {
      left[j] = u - knots_[span + 1 - j];
      right[j] = knots_[span + j] - u;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        ndu(j, r) = right[r + 1] + left[j - r];
        const double temp = ndu(j, r) != 0.0 ? ndu(r, j - 1) / ndu(j, r) : 0.0;
        ndu(r, j) = saved + right[r + 1] * temp;
        saved = left[j - r] * temp;
      }
      ndu(j, j) = saved;
    }
    ders.setZero(nders + 1, d + 1);
    for (int j = 0; j <= d; ++j) ders(0, j) = ndu(j, d);
    Eigen::MatrixXd a(2, d + 1);
    for (int r = 0; r <= d; ++r) {
      int s1 = 0, s2 = 1;
      a(0, 0) = 1.0;
      for (int k = 1; k <= nders; ++k) {
        double dv = 0.0;
        const int rk = r - k, pk = d - k;
        if (r >= k) {
          a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
          dv = a(s2, 0) * ndu(rk, pk);
        }
        const int j1 = rk >= -1 ? 1 : -rk;
        const int j2 = r - 1 <= pk ? k - 1 : d - r;
        for (int j = j1; j <= j2; ++j) {
          a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
          dv += a(s2, j) * ndu(rk + j, pk);
        }
        if (r <= pk) {
          a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
          dv += a(s2, k) * ndu(r, pk);
        }
        ders(k, r) = dv;
        std::swap(s1, s2);
      }
    }
    double factor = d;
    for (int k = 1; k <= nders; ++k) {
      for (int j = 0; j <= d; ++j) ders(k, j) *= factor;
      factor *= (d - k);
    }
  }

  BasisSpec spec_;
  std::vector<double> knots_;   // clamped, unit scale, size L_n + degree + 1
  std::vector<double> breaks_;  // kappa_0..kappa_{M_n+1}, unit scale
};

/// Gauss-Legendre nodes/weights on [-1,1] by Newton iteration on P_n.
inline void gauss_legendre(int npts, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.resize(npts);
  weights.resize(npts);
  for (int i = 0; i < npts; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (npts + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      if (npts == 1) p1 = x;
      for (int k = 2; k <= npts; ++k) {
        const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      const double pn = npts == 1 ? x : p1;
      const double pm = npts == 1 ? 1.0 : p0;
      dp = npts * (x * pn - pm) / (x * x - 1.0);
      const double dx = pn / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    nodes[i] = x;
    weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
}

/// Roughness penalty J (Gram matrix of second derivatives) and a factor D
/// with J = D^T D. J* embeds J block-diagonally with a p x p zero block.
struct PenaltyMatrices {
  Eigen::MatrixXd J;  // L_n x L_n, symmetric PSD
  Eigen::MatrixXd D;  // rank(J) x L_n

  Eigen::MatrixXd jstar(int p) const {
    const int ln = static_cast<int>(J.rows());
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(ln + p, ln + p);
    out.topLeftCorner(ln, ln) = J;
    return out;
  }
};

/// J_{ij} = int B_i'' B_j'' on [0,1], exact per-interval Gauss-Legendre
/// (the integrand is a polynomial of degree 2(d-2) on each interval).
/// D from the symmetric eigendecomposition with small eigenvalues clamped;
/// plain Cholesky is unusable since J has the affine functions in its nullspace.
inline PenaltyMatrices roughness_matrix(const BSplineBasis& basis) {
  if (basis.degree() < 2)
    throw std::invalid_argument("roughness_matrix: degree must be >= 2");
  const int ln = basis.size();
  const int d = basis.degree();
  const int npts = std::max(1, d - 1);
  std::vector<double> gl_x, gl_w;
  gauss_legendre(npts, gl_x, gl_w);

  PenaltyMatrices pen;
  pen.J = Eigen::MatrixXd::Zero(ln, ln);
  const auto& breaks = basis.breakpoints();
  Eigen::VectorXd row(ln);
  for (int i = 0; i + 1 < static_cast<int>(breaks.size()); ++i) {
    const double a = breaks[i], b = breaks[i + 1];
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    for (int q = 0; q < npts; ++q) {
      const double u = mid + half * gl_x[q];
      basis.eval_all(u, row, 2);
      pen.J.selfadjointView<Eigen::Lower>().rankUpdate(row, half * gl_w[q]);
    }
  }
  pen.J = pen.J.selfadjointView<Eigen::Lower>();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(pen.J);
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const double cutoff = 1e-12 * std::max(ev.cwiseAbs().maxCoeff(), 0.0);
  int rank = 0;
  for (int k = 0; k < ln; ++k)
    if (ev(k) > cutoff) ++rank;
  pen.D.resize(rank, ln);
  int r = 0;
  for (int k = 0; k < ln; ++k) {
    if (ev(k) > cutoff) pen.D.row(r++) = std::sqrt(ev(k)) * eig.eigenvectors().col(k).transpose();
  }
  return pen;
}

/// (int x(s) B_k(s) ds)_k over the unit domain by composite trapezoid on the
/// fixed fine grid with knots inserted. `x_phys` is evaluated in physical
/// coordinates.
template <class F>
Eigen::VectorXd functional_design_row(const BSplineBasis& basis, F&& x_phys,
                                      int resolution = BSplineBasis::kDesignGridPoints) {
  const auto grid = basis.quadrature_grid(resolution);
  const Eigen::VectorXd w = trapezoid_weights(grid);
  Eigen::VectorXd row = Eigen::VectorXd::Zero(basis.size());
  Eigen::VectorXd vals(basis.size());
  for (int g = 0; g < static_cast<int>(grid.size()); ++g) {
    const double xv = x_phys(basis.to_phys(grid[g]));
    if (!std::isfinite(xv))
      throw std::invalid_argument("functional_design_row: exposure not finite on domain");
    basis.eval_all(grid[g], vals);
    row.noalias() += (w(g) * xv) * vals;
  }
  return row;
}

}  // namespace funbuffer

#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "funbuffer/survdata.hpp"

namespace funbuffer {

/// Spline coefficients b and scalar effects theta; alpha = (b^T, theta^T)^T.
struct Coefs {
  Eigen::VectorXd b;
  Eigen::VectorXd theta;

  Eigen::VectorXd alpha() const {
    Eigen::VectorXd out(b.size() + theta.size());
    out << b, theta;
    return out;
  }
  static Coefs from_alpha(const Eigen::VectorXd& alpha, int ln) {
    return Coefs{alpha.head(ln), alpha.tail(alpha.size() - ln)};
  }
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Log partial likelihood l_n(alpha) with Breslow tie handling: tied event
/// times share one risk set that includes each other. Risk sums accumulate in
/// a single reverse pass over the descending-time order, stabilized by the
/// per-stratum max of eta.
inline double logpl_from_eta(const DesignedData& data, const Eigen::VectorXd& eta) {
  double ll = 0.0;
  for (const auto& order : data.stratum_order) {
    if (order.empty()) continue;
    double m = -std::numeric_limits<double>::infinity();
    for (int i : order) m = std::max(m, eta(i));
    double s0 = 0.0;
    const int len = static_cast<int>(order.size());
    int pos = 0;
    while (pos < len) {
      int end = pos;
      while (end + 1 < len && data.time(order[end + 1]) == data.time(order[pos])) ++end;
      for (int k = pos; k <= end; ++k) s0 += std::exp(eta(order[k]) - m);
      for (int k = pos; k <= end; ++k) {
        const int i = order[k];
        if (data.event(i) == 1) ll += eta(i) - m - std::log(s0);
      }
      pos = end + 1;
    }
  }
  return ll;
}

inline double logpl(const DesignedData& data, const Eigen::VectorXd& alpha) {
  return logpl_from_eta(data, data.X * alpha);
}

struct GradHess {
  Eigen::VectorXd grad;  // gradient of l_tilde = -l_n
  Eigen::MatrixXd hess;  // Hessian of l_tilde, symmetric PSD
};

/// Analytic gradient and Hessian of the negated log partial likelihood.
/// O(n m^2) via cumulative outer-product risk sums over the time-sorted data.
inline GradHess grad_hess(const DesignedData& data, const Eigen::VectorXd& alpha) {
  const int m = data.dim();
  GradHess out;
  out.grad = Eigen::VectorXd::Zero(m);
  out.hess = Eigen::MatrixXd::Zero(m, m);
  const Eigen::VectorXd eta = data.X * alpha;

  Eigen::VectorXd s1(m), u(m);
  Eigen::MatrixXd s2(m, m);
  for (const auto& order : data.stratum_order) {
    if (order.empty()) continue;
    double mshift = -std::numeric_limits<double>::infinity();
    for (int i : order) mshift = std::max(mshift, eta(i));
    double s0 = 0.0;
    s1.setZero();
    s2.setZero();
    const int len = static_cast<int>(order.size());
    int pos = 0;
    while (pos < len) {
      int end = pos;
      while (end + 1 < len && data.time(order[end + 1]) == data.time(order[pos])) ++end;
      for (int k = pos; k <= end; ++k) {
        const int i = order[k];
        const double w = std::exp(eta(i) - mshift);
        s0 += w;
        s1.noalias() += w * data.X.row(i).transpose();
        s2.selfadjointView<Eigen::Lower>().rankUpdate(data.X.row(i).transpose(), w);
      }
      for (int k = pos; k <= end; ++k) {
        const int i = order[k];
        if (data.event(i) != 1) continue;
        u = s1 / s0;
        out.grad.noalias() += u - data.X.row(i).transpose();
        out.hess.triangularView<Eigen::Lower>() += s2 * (1.0 / s0);
        out.hess.selfadjointView<Eigen::Lower>().rankUpdate(u, -1.0);
      }
      pos = end + 1;
    }
  }
  out.hess = out.hess.selfadjointView<Eigen::Lower>();
  return out;
}

/// Quadratic surrogate of l_tilde about alpha0 plus the smoothness
/// augmentation rows sqrt(2 n lambda2) D on the b-block:
/// l_tilde(alpha) ~ 1/2 ||Y - V alpha||^2 + const, and
/// (1/2n)||Ybar - Vbar alpha||^2 = (1/2n)||Y - V alpha||^2 + lambda2 b^T J b.
struct QuadSurrogate {
  Eigen::MatrixXd V;     // upper triangular, V^T V = hessian at alpha0
  Eigen::VectorXd Y;     // pseudo response
  Eigen::MatrixXd Vbar;  // (m + rank D) x m
  Eigen::VectorXd Ybar;
  Eigen::VectorXd alpha0;
  double jitter{0.0};  // ridge added to make the Hessian factorizable
};

namespace detail {

/// Cholesky with an escalating relative jitter ladder; returns the factor L
/// (lower) and the jitter actually used.
inline double jittered_llt(const Eigen::MatrixXd& h, Eigen::LLT<Eigen::MatrixXd>& llt) {
  const int m = static_cast<int>(h.rows());
  if (!h.allFinite())
    throw NumericalError(
        "Hessian numerically singular even after maximal jitter; "
        "consider a stronger lambda2 or fewer knots");
  const double scale = std::max(h.trace() / std::max(m, 1), 1e-300);
  for (double eps : {0.0, 1e-10, 1e-8, 1e-6}) {
    Eigen::MatrixXd work = h;
    if (eps > 0.0) work.diagonal().array() += eps * scale;
    llt.compute(work);
    if (llt.info() == Eigen::Success) return eps * scale;
  }
  throw NumericalError(
      "Hessian numerically singular even after maximal jitter; "
      "consider a stronger lambda2 or fewer knots");
}

}  // namespace detail

inline QuadSurrogate surrogate(const DesignedData& data, const Eigen::VectorXd& alpha0,
                               double lambda2, const Eigen::MatrixXd& d_factor) {
  const int m = data.dim();
  const GradHess gh = grad_hess(data, alpha0);
  Eigen::LLT<Eigen::MatrixXd> llt;
  QuadSurrogate q;
  q.jitter = detail::jittered_llt(gh.hess, llt);
  q.alpha0 = alpha0;
  q.V = llt.matrixU();
  // Y = (V^T)^{-1} (H alpha0 - grad); Hessian here includes the jitter so that
  // V^T V Y reconstruction stays exact.
  Eigen::VectorXd rhs = gh.hess * alpha0 - gh.grad;
  if (q.jitter > 0.0) rhs += q.jitter * alpha0;
  q.Y = llt.matrixL().solve(rhs);

  const int extra = lambda2 > 0.0 ? static_cast<int>(d_factor.rows()) : 0;
  q.Vbar.setZero(m + extra, m);
  q.Vbar.topRows(m) = q.V;
  q.Ybar.setZero(m + extra);
  q.Ybar.head(m) = q.Y;
  if (extra > 0) {
    const double n = static_cast<double>(data.n());
    q.Vbar.block(m, 0, extra, d_factor.cols()) = std::sqrt(2.0 * n * lambda2) * d_factor;
  }
  return q;
}

}  // namespace funbuffer

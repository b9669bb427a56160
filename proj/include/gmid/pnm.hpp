#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gmid/gp.hpp"
#include "gmid/grid.hpp"

namespace gmid {

/// M u = a0 u + a1 u' + a2 u''.
struct LinearOperatorSpec {
  std::array<double, 3> coeffs{1.0, 0.0, 0.0};

  static LinearOperatorSpec identity() { return {{1.0, 0.0, 0.0}}; }
  static LinearOperatorSpec first_derivative() { return {{0.0, 1.0, 0.0}}; }
  static LinearOperatorSpec second_derivative() { return {{0.0, 0.0, 1.0}}; }
  static LinearOperatorSpec combination(double a0, double a1, double a2) { return {{a0, a1, a2}}; }

  void validate() const {
    bool any = false;
    for (double a : coeffs) {
      if (!std::isfinite(a)) throw std::invalid_argument("LinearOperatorSpec: non-finite coefficient");
      any = any || a != 0.0;
    }
    if (!any) throw std::invalid_argument("LinearOperatorSpec: all coefficients are zero");
  }
};

/// Covariances of (u, M u) under a squared-exponential prior on u, from
/// analytic derivatives of k in the lag r = s - s'.
class OperatorKernel {
 public:
  OperatorKernel(KernelSpec base, LinearOperatorSpec op) : base_(base), op_(op) {
    base_.validate();
    op_.validate();
    if (base_.family != KernelFamily::squared_exponential_space) {
      throw std::invalid_argument("OperatorKernel: only the squared-exponential kernel is supported");
    }
  }

  /// d^m k / dr^m for m = 0..4.
  double derivative(int m, double r) const {
    const double l2 = base_.length_scale * base_.length_scale;
    const double k = base_.variance * std::exp(-r * r / (2.0 * l2));
    switch (m) {
      case 0: return k;
      case 1: return -r / l2 * k;
      case 2: return (r * r / (l2 * l2) - 1.0 / l2) * k;
      case 3: return (-r * r * r / (l2 * l2 * l2) + 3.0 * r / (l2 * l2)) * k;
      case 4: return (r * r * r * r / (l2 * l2 * l2 * l2) - 6.0 * r * r / (l2 * l2 * l2) + 3.0 / (l2 * l2)) * k;
      default: throw std::invalid_argument("OperatorKernel: derivative order must be 0..4");
    }
  }

  double k_uu(double s, double sp) const { return derivative(0, s - sp); }

  /// cov(u(s), M u(s')).
  double k_uf(double s, double sp) const {
    double v = 0.0;
    for (int j = 0; j < 3; ++j) v += op_.coeffs[static_cast<std::size_t>(j)] * sign(j) * derivative(j, s - sp);
    return v;
  }

  /// cov(M u(s), u(s')).
  double k_fu(double s, double sp) const { return k_uf(sp, s); }

  /// cov(M u(s), M u(s')).
  double k_ff(double s, double sp) const {
    double v = 0.0;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        v += op_.coeffs[static_cast<std::size_t>(i)] * op_.coeffs[static_cast<std::size_t>(j)] * sign(j) *
             derivative(i + j, s - sp);
      }
    }
    return v;
  }

  const KernelSpec& base() const { return base_; }
  const LinearOperatorSpec& op() const { return op_; }

 private:
  static double sign(int j) { return j % 2 ? -1.0 : 1.0; }

  KernelSpec base_;
  LinearOperatorSpec op_;
};

inline OperatorKernel operator_kernel(const KernelSpec& base, const LinearOperatorSpec& op) { return {base, op}; }

struct PnmProblem {
  LinearOperatorSpec op;
  KernelSpec kernel{KernelFamily::squared_exponential_space, 1.0, 0.2};
  std::vector<double> collocation;
  std::vector<double> forcing;
  double forcing_noise = 1e-8;
  std::vector<double> boundary;
  std::vector<double> boundary_values;
  double boundary_noise = 1e-10;
};

struct PnmPosterior {
  GaussianPosterior u;
  /// Posterior mean and standard deviation of M u at the collocation points.
  Vector f_mean;
  Vector f_sd;
};

/// Gaussian posterior of u at `query` given noisy forcing observations
/// (M u)(s_i) = f_i and near-exact boundary values of u.
inline PnmPosterior pnm_solve(const PnmProblem& prob, std::span<const double> query) {
  const OperatorKernel K(prob.kernel, prob.op);
  if (prob.collocation.size() != prob.forcing.size()) throw std::invalid_argument("pnm_solve: forcing length mismatch");
  if (prob.boundary.size() != prob.boundary_values.size()) {
    throw std::invalid_argument("pnm_solve: boundary values length mismatch");
  }
  if (prob.forcing_noise < 0.0 || prob.boundary_noise < 0.0) throw std::invalid_argument("pnm_solve: negative noise");
  const std::size_t nf = prob.collocation.size(), nb = prob.boundary.size(), nq = query.size();
  const std::size_t m = nf + nb;
  if (m == 0) throw std::invalid_argument("pnm_solve: no observations");
  // Data coordinate j: forcing at collocation[j] for j < nf, else u at boundary[j - nf].
  auto data_point = [&](std::size_t j) { return j < nf ? prob.collocation[j] : prob.boundary[j - nf]; };
  auto cov_dd = [&](std::size_t a, std::size_t b) {
    const double sa = data_point(a), sb = data_point(b);
    if (a < nf && b < nf) return K.k_ff(sa, sb);
    if (a < nf) return K.k_fu(sa, sb);
    if (b < nf) return K.k_uf(sa, sb);
    return K.k_uu(sa, sb);
  };
  Matrix Kdd(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  Vector y(static_cast<Eigen::Index>(m));
  for (std::size_t a = 0; a < m; ++a) {
    y(static_cast<Eigen::Index>(a)) = a < nf ? prob.forcing[a] : prob.boundary_values[a - nf];
    for (std::size_t b = 0; b < m; ++b) Kdd(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = cov_dd(a, b);
    Kdd(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)) += a < nf ? prob.forcing_noise : prob.boundary_noise;
  }
  const double scale = Kdd.diagonal().maxCoeff();
  const JitteredCholesky chol = jittered_cholesky(Kdd, scale);
  const Vector alpha = chol.llt.solve(y);

  Matrix Kqd(static_cast<Eigen::Index>(nq), static_cast<Eigen::Index>(m));
  Matrix Kqq(static_cast<Eigen::Index>(nq), static_cast<Eigen::Index>(nq));
  for (std::size_t q = 0; q < nq; ++q) {
    for (std::size_t j = 0; j < m; ++j) {
      Kqd(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(j)) =
          j < nf ? K.k_uf(query[q], data_point(j)) : K.k_uu(query[q], data_point(j));
    }
    for (std::size_t r = 0; r < nq; ++r) {
      Kqq(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(r)) = K.k_uu(query[q], query[r]);
    }
  }
  PnmPosterior out;
  out.u.mean = Kqd * alpha;
  const Matrix V = chol.llt.matrixL().solve(Kqd.transpose());
  out.u.cov = Kqq - V.transpose() * V;
  out.u.cov = 0.5 * (out.u.cov + out.u.cov.transpose());

  Matrix Kfd(static_cast<Eigen::Index>(nf), static_cast<Eigen::Index>(m));
  Vector prior_ff(static_cast<Eigen::Index>(nf));
  for (std::size_t i = 0; i < nf; ++i) {
    for (std::size_t j = 0; j < m; ++j) Kfd(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cov_dd(i, j);
    prior_ff(static_cast<Eigen::Index>(i)) = K.k_ff(prob.collocation[i], prob.collocation[i]);
  }
  out.f_mean = Kfd * alpha;
  const Matrix Vf = chol.llt.matrixL().solve(Kfd.transpose());
  out.f_sd = (prior_ff - Vf.colwise().squaredNorm().transpose()).cwiseMax(0.0).cwiseSqrt();
  return out;
}

}  // namespace gmid

#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "gmid/autodiff/tape.hpp"
#include "gmid/burgers.hpp"
#include "gmid/errors.hpp"
#include "gmid/gp.hpp"
#include "gmid/grid.hpp"
#include "gmid/optimize.hpp"

namespace gmid {

namespace detail {

inline void check_square(const Matrix& A, Eigen::Index n, const char* what) {
  if (A.rows() != n || A.cols() != n) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(n) + "x" + std::to_string(n) +
                                " matrix, got " + std::to_string(A.rows()) + "x" + std::to_string(A.cols()));
  }
}

inline Matrix symmetrize(const Matrix& A) { return 0.5 * (A + A.transpose()); }

// Symmetrizes and, if needed, adds escalating jitter until A factorizes.
inline Matrix repair_covariance(const Matrix& A, const char* what) {
  Matrix S = symmetrize(A);
  Eigen::LLT<Matrix> llt(S);
  if (llt.info() == Eigen::Success) return S;
  const double scale = std::max(S.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  try {
    const JitteredCholesky chol = jittered_cholesky(S, scale, false);
    S.diagonal().array() += chol.jitter;
    return S;
  } catch (const FactorizationError&) {
    throw FactorizationError(std::string(what) + ": covariance lost positive definiteness");
  }
}

}  // namespace detail

/// u_b + K (z - H u_b) with K = C_b H' (H C_b H' + R)^-1.
inline Vector optimal_interpolation(const Vector& u_b, const Matrix& C_b, const Matrix& H, const Matrix& R,
                                    const Vector& z) {
  const Eigen::Index n = u_b.size(), m = z.size();
  detail::check_square(C_b, n, "optimal_interpolation: C_b");
  detail::check_square(R, m, "optimal_interpolation: R");
  if (H.rows() != m || H.cols() != n) throw std::invalid_argument("optimal_interpolation: H has wrong shape");
  if (m == 0) return u_b;
  const Matrix CHt = C_b * H.transpose();
  const Matrix S = detail::symmetrize(H * CHt + R);
  Eigen::LLT<Matrix> llt(S);
  if (llt.info() != Eigen::Success) throw FactorizationError("optimal_interpolation: H C_b H' + R is not positive definite");
  return u_b + CHt * llt.solve(z - H * u_b);
}

/// One time slice of a linear-Gaussian observation model; empty z means no data.
struct KalmanObservation {
  Vector z;
  Matrix H;
  Matrix R;
};

struct KalmanResult {
  std::vector<Vector> predicted_mean, filtered_mean;
  std::vector<Matrix> predicted_cov, filtered_cov;
};

/// x_0 ~ N(m0, P0), x_{t+1} = M x_t + w_t with w_t ~ N(0, Q), z_t = H_t x_t + e_t.
/// The first slice observes x_0 directly (no forecast step before it).
inline KalmanResult kalman_filter(const std::vector<KalmanObservation>& obs, const Matrix& M, const Matrix& Q,
                                  const Vector& m0, const Matrix& P0) {
  const Eigen::Index n = m0.size();
  detail::check_square(M, n, "kalman_filter: M");
  detail::check_square(Q, n, "kalman_filter: Q");
  detail::check_square(P0, n, "kalman_filter: P0");
  KalmanResult res;
  Vector m = m0;
  Matrix P = P0;
  for (std::size_t t = 0; t < obs.size(); ++t) {
    if (t > 0) {
      m = M * m;
      P = detail::repair_covariance(M * P * M.transpose() + Q, "kalman_filter forecast");
    }
    res.predicted_mean.push_back(m);
    res.predicted_cov.push_back(P);
    const KalmanObservation& o = obs[t];
    if (o.z.size() > 0) {
      if (o.H.rows() != o.z.size() || o.H.cols() != n) throw std::invalid_argument("kalman_filter: H has wrong shape");
      detail::check_square(o.R, o.z.size(), "kalman_filter: R");
      const Matrix PHt = P * o.H.transpose();
      const Matrix S = detail::symmetrize(o.H * PHt + o.R);
      Eigen::LLT<Matrix> llt(S);
      if (llt.info() != Eigen::Success) {
        throw FactorizationError("kalman_filter: innovation covariance not positive definite at t=" + std::to_string(t));
      }
      const Matrix K = llt.solve(PHt.transpose()).transpose();
      m += K * (o.z - o.H * m);
      const Matrix IKH = Matrix::Identity(n, n) - K * o.H;
      P = detail::repair_covariance(IKH * P * IKH.transpose() + K * o.R * K.transpose(), "kalman_filter update");
    }
    res.filtered_mean.push_back(m);
    res.filtered_cov.push_back(P);
  }
  return res;
}

struct SmootherResult {
  std::vector<Vector> mean;
  std::vector<Matrix> cov;
};

/// Rauch-Tung-Striebel backward pass over a kalman_filter() result.
inline SmootherResult rts_smoother(const KalmanResult& kf, const Matrix& M) {
  const std::size_t T = kf.filtered_mean.size();
  SmootherResult out;
  out.mean.resize(T);
  out.cov.resize(T);
  if (T == 0) return out;
  out.mean[T - 1] = kf.filtered_mean[T - 1];
  out.cov[T - 1] = kf.filtered_cov[T - 1];
  for (std::size_t t = T - 1; t-- > 0;) {
    const Matrix& Pp = kf.predicted_cov[t + 1];
    Eigen::LDLT<Matrix> ldlt(Pp);
    if (ldlt.info() != Eigen::Success) throw FactorizationError("rts_smoother: singular forecast covariance");
    const Matrix G = ldlt.solve(M * kf.filtered_cov[t]).transpose();
    out.mean[t] = kf.filtered_mean[t] + G * (out.mean[t + 1] - kf.predicted_mean[t + 1]);
    out.cov[t] = detail::symmetrize(kf.filtered_cov[t] + G * (out.cov[t + 1] - Pp) * G.transpose());
  }
  return out;
}

/// Linear dynamics u -> M u as a model functor.
struct LinearModel {
  Matrix M;

  template <class S>
  std::vector<S> operator()(std::span<const S> u) const {
    if (static_cast<Eigen::Index>(u.size()) != M.cols()) throw std::invalid_argument("LinearModel: state length mismatch");
    std::vector<S> out(static_cast<std::size_t>(M.rows()), S(0.0));
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      S acc(0.0);
      for (Eigen::Index j = 0; j < M.cols(); ++j) {
        if (M(i, j) != 0.0) acc = acc + S(M(i, j)) * u[static_cast<std::size_t>(j)];
      }
      out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
  }
};

/// `substeps` coarse Burgers steps between consecutive observation times.
struct BurgersModel {
  CoarseBurgers solver;
  std::size_t substeps = 1;

  template <class S>
  std::vector<S> operator()(std::span<const S> u) const {
    return solver.advance<S>(u, substeps);
  }
};

/// Jacobian of a model functor at x, one reverse sweep per output.
template <class Model>
Matrix model_jacobian(const Model& model, const Vector& x) {
  ad::Tape tape;
  std::vector<ad::Var> u;
  for (Eigen::Index i = 0; i < x.size(); ++i) u.push_back(tape.variable(x(i)));
  const std::vector<ad::Var> y = model(std::span<const ad::Var>(u));
  Matrix J(static_cast<Eigen::Index>(y.size()), x.size());
  for (std::size_t r = 0; r < y.size(); ++r) {
    tape.reverse(y[r]);
    for (Eigen::Index c = 0; c < x.size(); ++c) J(static_cast<Eigen::Index>(r), c) = tape.adjoint(u[static_cast<std::size_t>(c)]);
  }
  return J;
}

/// Kalman filter for nonlinear dynamics: the mean is propagated through the
/// model and the covariance through its tangent-linear map at the analysis.
template <class Model>
KalmanResult extended_kalman_filter(const std::vector<KalmanObservation>& obs, const Model& model, const Matrix& Q,
                                    const Vector& m0, const Matrix& P0) {
  const Eigen::Index n = m0.size();
  detail::check_square(Q, n, "extended_kalman_filter: Q");
  detail::check_square(P0, n, "extended_kalman_filter: P0");
  KalmanResult res;
  Vector m = m0;
  Matrix P = P0;
  for (std::size_t t = 0; t < obs.size(); ++t) {
    if (t > 0) {
      const Matrix M = model_jacobian(model, m);
      const std::vector<double> next = model(std::span<const double>(m.data(), static_cast<std::size_t>(n)));
      m = Eigen::Map<const Vector>(next.data(), n);
      P = detail::repair_covariance(M * P * M.transpose() + Q, "extended_kalman_filter forecast");
    }
    res.predicted_mean.push_back(m);
    res.predicted_cov.push_back(P);
    const KalmanObservation& o = obs[t];
    if (o.z.size() > 0) {
      const Matrix PHt = P * o.H.transpose();
      Eigen::LLT<Matrix> llt(detail::symmetrize(o.H * PHt + o.R));
      if (llt.info() != Eigen::Success) {
        throw FactorizationError("extended_kalman_filter: innovation covariance not positive definite at t=" +
                                 std::to_string(t));
      }
      const Matrix K = llt.solve(PHt.transpose()).transpose();
      m += K * (o.z - o.H * m);
      const Matrix IKH = Matrix::Identity(n, n) - K * o.H;
      P = detail::repair_covariance(IKH * P * IKH.transpose() + K * o.R * K.transpose(), "extended_kalman_filter update");
    }
    res.filtered_mean.push_back(m);
    res.filtered_cov.push_back(P);
  }
  return res;
}

/// Observation at one window time: values z of the state entries `indices`
/// with diagonal error variances r.
struct WindowObservation {
  std::vector<std::size_t> indices;
  Vector z;
  Vector r;
};

struct AssimConfig {
  Vector u_b;
  Matrix C_b;
  /// Model-error moments for the weak constraint.
  Vector mu_eta;
  Matrix Q;
  LbfgsConfig optimizer;
};

enum class Var4dMode { strong, weak };

struct Var4dResult {
  Vector u0;
  /// eta_1 .. eta_{T-1} in weak mode; empty in strong mode.
  std::vector<Vector> eta;
  /// States u_0 .. u_{T-1} implied by the solution.
  std::vector<Vector> trajectory;
  double objective = 0.0;
  double grad_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> history;
};

/// Background-error covariance from the squared-exponential kernel on the
/// spatial nodes, with a relative nugget so that it is invertible.
inline Matrix background_covariance(std::span<const double> s_nodes, double variance, double length_scale,
                                    double nugget = 1e-4) {
  const std::vector<Coord> pts = spatial_coords(s_nodes);
  Matrix C = cov_matrix(KernelSpec{KernelFamily::squared_exponential_space, variance, length_scale}, pts);
  C.diagonal().array() += nugget * variance;
  return C;
}

namespace detail {

inline Matrix lower_factor(const Matrix& A, const char* what) {
  const Eigen::LLT<Matrix> llt(symmetrize(A));
  if (llt.info() != Eigen::Success) throw FactorizationError(std::string(what) + " is not positive definite");
  return llt.matrixL();
}

/// b + L v on the tape.
inline std::vector<ad::Var> affine(const Vector& b, const Matrix& L, std::span<const ad::Var> v) {
  std::vector<ad::Var> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    ad::Var acc(b(static_cast<Eigen::Index>(i)));
    for (std::size_t j = 0; j <= i; ++j) {
      acc = acc + ad::Var(L(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) * v[j];
    }
    out[i] = acc;
  }
  return out;
}

}  // namespace detail

/// 4DVar over a window of `obs.size()` times starting at the initial state.
/// Strong mode minimizes background + data misfit over u_0 with
/// u_{t+1} = model(u_t); weak mode also optimizes eta_t, with
/// u_{t+1} = model(u_t) + eta_{t+1} and a model-error penalty. Gradients come
/// from the reverse-mode tape through the model.
template <class Model>
Var4dResult var4d(const Vector& u0_init, const std::vector<WindowObservation>& obs, const AssimConfig& cfg,
                  const Model& model, Var4dMode mode) {
  const Eigen::Index n = cfg.u_b.size();
  if (u0_init.size() != n) throw std::invalid_argument("var4d: initial state length mismatch");
  if (obs.empty()) throw std::invalid_argument("var4d: empty window");
  detail::check_square(cfg.C_b, n, "var4d: C_b");
  for (const auto& o : obs) {
    if (o.z.size() != static_cast<Eigen::Index>(o.indices.size()) || o.r.size() != o.z.size()) {
      throw std::invalid_argument("var4d: observation indices/values/variances differ in length");
    }
    for (std::size_t i : o.indices) {
      if (i >= static_cast<std::size_t>(n)) throw std::invalid_argument("var4d: observation index out of range");
    }
    if ((o.r.array() <= 0.0).any()) throw std::invalid_argument("var4d: observation variances must be > 0");
  }
  // Control variables: u0 = u_b + L_b v0 and eta_t = mu_eta + L_Q v_t, so the
  // background and model-error terms become 0.5 |v|^2.
  const Matrix L_b = detail::lower_factor(cfg.C_b, "var4d: C_b");
  const std::size_t T = obs.size();
  const bool weak = mode == Var4dMode::weak;
  Matrix L_Q;
  Vector mu_eta = Vector::Zero(n);
  if (weak) {
    detail::check_square(cfg.Q, n, "var4d: Q");
    L_Q = detail::lower_factor(cfg.Q, "var4d: Q");
    if (cfg.mu_eta.size() == n) mu_eta = cfg.mu_eta;
    else if (cfg.mu_eta.size() != 0) throw std::invalid_argument("var4d: mu_eta length mismatch");
  }
  const std::size_t un = static_cast<std::size_t>(n);
  const std::size_t n_eta = weak ? T - 1 : 0;

  auto objective = [&](std::span<const ad::Var> x) {
    std::vector<ad::Var> u = detail::affine(cfg.u_b, L_b, x.subspan(0, un));
    ad::Var J(0.0);
    for (const ad::Var& v : x) J = J + v * v;
    J = ad::Var(0.5) * J;
    for (std::size_t t = 0; t < T; ++t) {
      if (t > 0) {
        u = model(std::span<const ad::Var>(u));
        if (weak) {
          const std::vector<ad::Var> eta = detail::affine(mu_eta, L_Q, x.subspan(un * t, un));
          for (std::size_t i = 0; i < un; ++i) u[i] = u[i] + eta[i];
        }
      }
      const WindowObservation& o = obs[t];
      for (std::size_t k = 0; k < o.indices.size(); ++k) {
        const ad::Var r = ad::Var(o.z(static_cast<Eigen::Index>(k))) - u[o.indices[k]];
        J = J + ad::Var(0.5 / o.r(static_cast<Eigen::Index>(k))) * r * r;
      }
    }
    return J;
  };

  Vector x0 = Vector::Zero(static_cast<Eigen::Index>(un * (1 + n_eta)));
  x0.head(n) = L_b.triangularView<Eigen::Lower>().solve(u0_init - cfg.u_b);

  const ValueGradient fg = [&](const Vector& x, Vector& g) {
    double value = 0.0;
    const std::vector<double> grad =
        ad::grad(objective, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), &value);
    g = Eigen::Map<const Vector>(grad.data(), static_cast<Eigen::Index>(grad.size()));
    return value;
  };
  const LbfgsResult opt = lbfgs_minimize(fg, x0, cfg.optimizer);

  Var4dResult res;
  res.u0 = cfg.u_b + L_b * opt.x.head(n);
  res.objective = opt.value;
  res.grad_norm = opt.grad_norm;
  res.iterations = opt.iterations;
  res.converged = opt.converged;
  res.history = opt.history;
  std::vector<double> u(res.u0.data(), res.u0.data() + n);
  res.trajectory.push_back(res.u0);
  for (std::size_t t = 1; t < T; ++t) {
    u = model(std::span<const double>(u));
    if (weak) {
      const Vector eta = mu_eta + L_Q * opt.x.segment(static_cast<Eigen::Index>(un * t), n);
      res.eta.push_back(eta);
      for (std::size_t i = 0; i < un; ++i) u[i] += eta(static_cast<Eigen::Index>(i));
    }
    res.trajectory.push_back(Eigen::Map<const Vector>(u.data(), n));
  }
  return res;
}

}  // namespace gmid

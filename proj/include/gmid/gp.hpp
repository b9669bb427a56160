#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "gmid/errors.hpp"
#include "gmid/grid.hpp"
#include "gmid/rng.hpp"

namespace gmid {

/// A point in space-time. Purely spatial kernels ignore `t`.
struct Coord {
  double s = 0.0;
  double t = 0.0;
};

inline std::vector<Coord> spatial_coords(std::span<const double> s) {
  std::vector<Coord> out;
  out.reserve(s.size());
  for (double x : s) out.push_back({x, 0.0});
  return out;
}

inline std::vector<Coord> grid_coords(const SpaceTimeGrid& grid) {
  std::vector<Coord> out;
  out.reserve(grid.size());
  for (std::size_t k = 0; k < grid.T(); ++k) {
    for (std::size_t i = 0; i < grid.n(); ++i) out.push_back({grid.s(i), grid.t(k)});
  }
  return out;
}

enum class KernelFamily {
  /// variance * exp(-|(s,t) - (s',t')| / length_scale), Euclidean in raw (s,t).
  exponential_spacetime,
  /// variance * exp(-(s - s')^2 / (2 length_scale^2)).
  squared_exponential_space,
};

struct KernelSpec {
  KernelFamily family = KernelFamily::squared_exponential_space;
  double variance = 1.0;
  double length_scale = 1.0;

  void validate() const {
    if (!(variance > 0.0) || !std::isfinite(variance)) {
      throw std::invalid_argument("KernelSpec: variance must be positive and finite");
    }
    if (!(length_scale > 0.0) || !std::isfinite(length_scale)) {
      throw std::invalid_argument("KernelSpec: length_scale must be positive and finite");
    }
  }

  double operator()(const Coord& a, const Coord& b) const {
    switch (family) {
      case KernelFamily::exponential_spacetime: {
        const double ds = a.s - b.s, dt = a.t - b.t;
        return variance * std::exp(-std::sqrt(ds * ds + dt * dt) / length_scale);
      }
      case KernelFamily::squared_exponential_space: {
        const double ds = a.s - b.s;
        return variance * std::exp(-ds * ds / (2.0 * length_scale * length_scale));
      }
    }
    return 0.0;
  }
};

class FactorizationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

inline Matrix cov_matrix(const KernelSpec& kernel, std::span<const Coord> a, std::span<const Coord> b) {
  kernel.validate();
  if (a.empty() || b.empty()) throw std::invalid_argument("cov_matrix: empty point list");
  Matrix K(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  const bool same = a.data() == b.data() && a.size() == b.size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = same ? i : 0; j < b.size(); ++j) {
      const double v = kernel(a[i], b[j]);
      K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      if (same) K(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  }
  return K;
}

inline Matrix cov_matrix(const KernelSpec& kernel, std::span<const Coord> a) { return cov_matrix(kernel, a, a); }

/// Cholesky with escalating diagonal jitter: starts at 1e-10 * scale and
/// multiplies by 10 up to 1e-4 * scale. `scale` is usually the kernel variance.
struct JitteredCholesky {
  Eigen::LLT<Matrix> llt;
  double jitter = 0.0;
};

inline JitteredCholesky jittered_cholesky(const Matrix& A, double scale, bool allow_zero_jitter = true) {
  JitteredCholesky out;
  if (allow_zero_jitter) {
    out.llt.compute(A);
    if (out.llt.info() == Eigen::Success) return out;
  }
  for (double rel = 1e-10; rel <= 1e-4 * (1.0 + 1e-9); rel *= 10.0) {
    out.jitter = rel * scale;
    Matrix Aj = A;
    Aj.diagonal().array() += out.jitter;
    out.llt.compute(Aj);
    if (out.llt.info() == Eigen::Success) return out;
  }
  throw FactorizationError("Cholesky failed after jitter escalation to 1e-4 * " + std::to_string(scale));
}

struct GPSample {
  Vector values;
  std::uint64_t seed = 0;
};

/// values = L z with L the lower Cholesky factor of K + jitter I and z drawn
/// from substream `stream_id` of `seed`.
inline GPSample sample_gp(const KernelSpec& kernel, std::span<const Coord> points, std::uint64_t seed,
                          std::uint64_t stream_id = 0) {
  const Matrix K = cov_matrix(kernel, points);
  // Jitter is always applied: exact factorization of near-singular Gram
  // matrices can "succeed" with garbage pivots.
  const JitteredCholesky chol = jittered_cholesky(K, kernel.variance, false);
  Rng rng = make_rng(seed, stream_id);
  NormalSampler normal;
  Vector z(static_cast<Eigen::Index>(points.size()));
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  return {chol.llt.matrixL() * z, seed};
}

struct GaussianPosterior {
  Vector mean;
  Matrix cov;
};

/// Zero-mean GP conditional at `query` given noisy values at `train`.
inline GaussianPosterior gp_condition(const KernelSpec& kernel, std::span<const Coord> train,
                                      const Eigen::Ref<const Vector>& train_values, double noise_var,
                                      std::span<const Coord> query) {
  kernel.validate();
  if (noise_var < 0.0) throw std::invalid_argument("gp_condition: noise_var must be >= 0");
  if (static_cast<std::size_t>(train_values.size()) != train.size()) {
    throw std::invalid_argument("gp_condition: train values/points length mismatch");
  }
  const Matrix Kqq = cov_matrix(kernel, query);
  if (train.empty()) return {Vector::Zero(Kqq.rows()), Kqq};
  Matrix Ktt = cov_matrix(kernel, train);
  Ktt.diagonal().array() += noise_var;
  const JitteredCholesky chol = jittered_cholesky(Ktt, kernel.variance);
  const Matrix Ktq = cov_matrix(kernel, train, query);
  const Vector alpha = chol.llt.solve(train_values);
  const Matrix V = chol.llt.matrixL().solve(Ktq);
  GaussianPosterior post;
  post.mean = Ktq.transpose() * alpha;
  post.cov = Kqq - V.transpose() * V;
  post.cov = 0.5 * (post.cov + post.cov.transpose());
  return post;
}

/// log N(x; 0, Sigma) from a Cholesky factorization of Sigma.
inline double gaussian_logpdf(const Eigen::LLT<Matrix>& llt, const Eigen::Ref<const Vector>& x) {
  const Vector w = llt.matrixL().solve(x);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (w.squaredNorm() + logdet + static_cast<double>(x.size()) * std::log(2.0 * kPi));
}

}  // namespace gmid

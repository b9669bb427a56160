#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gmid/assimilation.hpp"
#include "gmid/optimize.hpp"
#include "support.hpp"

using namespace gmid;

namespace {

Matrix random_spd(Eigen::Index n, std::mt19937_64& rng, double ridge = 0.5) {
  std::normal_distribution<double> normal;
  Matrix A(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) A(i, j) = normal(rng);
  }
  return A * A.transpose() / static_cast<double>(n) + ridge * Matrix::Identity(n, n);
}

Vector random_vector(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

// Joint Gaussian over (x_0..x_{T-1}, z_0..z_{T-1}) for a linear chain, each
// z_t = H x_t + e_t with the same H and R.
struct JointChain {
  Vector mean;
  Matrix cov;
};

JointChain joint_chain(const Matrix& M, const Matrix& Q, const Vector& m0, const Matrix& P0, const Matrix& H,
                       const Matrix& R, std::size_t T) {
  const Eigen::Index n = m0.size(), m = H.rows(), Ti = static_cast<Eigen::Index>(T);
  // x = A w with w = (x_0, w_1.., e_0..) independent.
  const Eigen::Index nw = n * Ti + m * Ti;
  Matrix A = Matrix::Zero(n * Ti + m * Ti, nw);
  Matrix W = Matrix::Zero(nw, nw);
  Vector mw = Vector::Zero(nw);
  mw.head(n) = m0;
  W.block(0, 0, n, n) = P0;
  for (Eigen::Index t = 1; t < Ti; ++t) W.block(n * t, n * t, n, n) = Q;
  for (Eigen::Index t = 0; t < Ti; ++t) W.block(n * Ti + m * t, n * Ti + m * t, m, m) = R;
  for (Eigen::Index t = 0; t < Ti; ++t) {
    for (Eigen::Index s = 0; s <= t; ++s) {
      Matrix P = Matrix::Identity(n, n);
      for (Eigen::Index k = s; k < t; ++k) P = M * P;
      A.block(n * t, n * s, n, n) = P;
      A.block(n * Ti + m * t, n * s, m, n) = H * P;
    }
    A.block(n * Ti + m * t, n * Ti + m * t, m, m) = Matrix::Identity(m, m);
  }
  return {A * mw, A * W * A.transpose()};
}

}  // namespace

TEST(OptimalInterpolation, MatchesPartitionedGaussian) {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 10; ++rep) {
    const Eigen::Index n = 6, m = 4;
    const Matrix C = random_spd(n, rng), R = random_spd(m, rng, 0.1);
    const Matrix H = Matrix::Random(m, n);
    const Vector u_b = random_vector(n, rng), z = random_vector(m, rng);
    Vector mean(n + m);
    mean << u_b, H * u_b;
    Matrix cov(n + m, n + m);
    cov << C, C * H.transpose(), H * C, H * C * H.transpose() + R;
    std::vector<Eigen::Index> fixed;
    for (Eigen::Index i = 0; i < m; ++i) fixed.push_back(n + i);
    const Vector expected = oracle::condition(mean, cov, fixed, z);
    EXPECT_LT((optimal_interpolation(u_b, C, H, R, z) - expected).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(OptimalInterpolation, MinimizesThreeDimensionalVariationalCost) {
  std::mt19937_64 rng(2);
  const Eigen::Index n = 5, m = 3;
  const Matrix C = random_spd(n, rng), R = random_spd(m, rng, 0.2);
  const Matrix H = Matrix::Random(m, n);
  const Vector u_b = random_vector(n, rng), z = random_vector(m, rng);
  const Vector a = optimal_interpolation(u_b, C, H, R, z);
  const Vector grad = C.inverse() * (a - u_b) - H.transpose() * R.inverse() * (z - H * a);
  EXPECT_LT(grad.norm(), 1e-8);
}

TEST(OptimalInterpolation, EdgeCases) {
  const Vector u_b = Vector::LinSpaced(3, 0.0, 1.0);
  const Matrix C = Matrix::Identity(3, 3);
  EXPECT_EQ(optimal_interpolation(u_b, C, Matrix(0, 3), Matrix(0, 0), Vector(0)), u_b);
  // Exact observation of one component pins it.
  Matrix H = Matrix::Zero(1, 3);
  H(0, 1) = 1.0;
  const Vector a = optimal_interpolation(u_b, C, H, Matrix::Constant(1, 1, 1e-14), Vector::Constant(1, 7.0));
  EXPECT_NEAR(a(1), 7.0, 1e-10);
  EXPECT_EQ(a(0), u_b(0));
  EXPECT_THROW(optimal_interpolation(u_b, C, Matrix::Zero(1, 2), Matrix::Identity(1, 1), Vector::Zero(1)),
               std::invalid_argument);
  EXPECT_THROW(optimal_interpolation(u_b, C, H, Matrix::Constant(1, 1, -2.0), Vector::Zero(1)), FactorizationError);
}

TEST(Kalman, MatchesJointGaussianConditioning) {
  std::mt19937_64 rng(3);
  const Eigen::Index n = 2;
  const std::size_t T = 3;
  Matrix M(2, 2);
  M << 0.9, 0.2, -0.1, 0.8;
  const Matrix Q = random_spd(n, rng, 0.1), P0 = random_spd(n, rng), R = random_spd(1, rng, 0.2);
  Matrix H(1, 2);
  H << 1.0, 0.5;
  const Vector m0 = random_vector(n, rng);
  std::vector<KalmanObservation> obs;
  Vector zs(3);
  for (std::size_t t = 0; t < T; ++t) {
    obs.push_back({random_vector(1, rng), H, R});
    zs(static_cast<Eigen::Index>(t)) = obs.back().z(0);
  }
  const auto kf = kalman_filter(obs, M, Q, m0, P0);
  const auto joint = joint_chain(M, Q, m0, P0, H, R, T);
  // Filtered mean at the last time conditions on all observations.
  const Vector all = oracle::condition(joint.mean, joint.cov, {6, 7, 8}, zs);
  EXPECT_LT((kf.filtered_mean[2] - all.segment(4, 2)).cwiseAbs().maxCoeff(), 1e-8);
  // Filtered mean at t = 1 conditions on z_0, z_1 only.
  const Vector two = oracle::condition(joint.mean, joint.cov, {6, 7}, zs.head(2));
  EXPECT_LT((kf.filtered_mean[1] - two.segment(2, 2)).cwiseAbs().maxCoeff(), 1e-8);
  // Smoothed means condition every time on all observations.
  const auto sm = rts_smoother(kf, M);
  for (Eigen::Index t = 0; t < 3; ++t) {
    EXPECT_LT((sm.mean[static_cast<std::size_t>(t)] - all.segment(2 * t, 2)).cwiseAbs().maxCoeff(), 1e-8) << t;
  }
}

TEST(Kalman, StaticModelVarianceShrinks) {
  const double s0 = 2.0, so = 0.5;
  std::vector<KalmanObservation> obs;
  for (int k = 0; k < 6; ++k) obs.push_back({Vector::Constant(1, 1.0 + 0.1 * k), Matrix::Identity(1, 1), Matrix::Constant(1, 1, so)});
  const auto kf = kalman_filter(obs, Matrix::Identity(1, 1), Matrix::Zero(1, 1), Vector::Zero(1), Matrix::Constant(1, 1, s0));
  for (int k = 0; k < 6; ++k) {
    EXPECT_NEAR(kf.filtered_cov[static_cast<std::size_t>(k)](0, 0), 1.0 / (1.0 / s0 + (k + 1) / so), 1e-14);
  }
}

TEST(Kalman, ScalarUpdateLiesBetweenForecastAndObservation) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3.0, 3.0), pos(0.1, 3.0);
  for (int rep = 0; rep < 100; ++rep) {
    const double m0 = u(rng), z = u(rng);
    const auto kf = kalman_filter({{Vector::Constant(1, z), Matrix::Identity(1, 1), Matrix::Constant(1, 1, pos(rng))}},
                                  Matrix::Identity(1, 1), Matrix::Zero(1, 1), Vector::Constant(1, m0),
                                  Matrix::Constant(1, 1, pos(rng)));
    const double a = kf.filtered_mean[0](0);
    EXPECT_GE(a, std::min(m0, z));
    EXPECT_LE(a, std::max(m0, z));
  }
}

TEST(Kalman, NoObservationsIsPureForecast) {
  Matrix M(2, 2);
  M << 0.5, 1.0, 0.0, 0.9;
  const Vector m0(Vector::Constant(2, 1.0));
  const std::vector<KalmanObservation> obs(4);
  const auto kf = kalman_filter(obs, M, Matrix::Identity(2, 2), m0, Matrix::Identity(2, 2));
  Vector m = m0;
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_LT((kf.filtered_mean[t] - m).norm(), 1e-15);
    m = M * m;
  }
}

TEST(Kalman, ExtendedFilterAgreesOnLinearModel) {
  std::mt19937_64 rng(5);
  Matrix M(3, 3);
  M << 0.8, 0.1, 0.0, 0.1, 0.8, 0.1, 0.0, 0.1, 0.8;
  const Matrix Q = random_spd(3, rng, 0.1);
  Matrix H = Matrix::Zero(2, 3);
  H(0, 0) = 1.0;
  H(1, 2) = 1.0;
  std::vector<KalmanObservation> obs;
  for (int t = 0; t < 4; ++t) obs.push_back({random_vector(2, rng), H, 0.3 * Matrix::Identity(2, 2)});
  const auto a = kalman_filter(obs, M, Q, Vector::Zero(3), Matrix::Identity(3, 3));
  const auto b = extended_kalman_filter(obs, LinearModel{M}, Q, Vector::Zero(3), Matrix::Identity(3, 3));
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_LT((a.filtered_mean[t] - b.filtered_mean[t]).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((a.filtered_cov[t] - b.filtered_cov[t]).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Kalman, ModelJacobianMatchesFiniteDifferences) {
  const BurgersModel model{CoarseBurgers(9, 0.5, 0.1, 0.05), 3};
  Vector x(9);
  for (Eigen::Index i = 0; i < 9; ++i) x(i) = std::exp(-std::pow(-2.0 + 0.5 * static_cast<double>(i), 2));
  const Matrix J = model_jacobian(model, x);
  const double h = 1e-6;
  for (Eigen::Index j = 0; j < 9; ++j) {
    Vector xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    const auto fp = model(std::span<const double>(xp.data(), 9)), fm = model(std::span<const double>(xm.data(), 9));
    for (Eigen::Index i = 0; i < 9; ++i) {
      EXPECT_NEAR(J(i, j), (fp[static_cast<std::size_t>(i)] - fm[static_cast<std::size_t>(i)]) / (2 * h), 1e-7);
    }
  }
}

namespace {

struct LinearWindow {
  Matrix M, C_b, Q;
  Vector u_b;
  std::vector<WindowObservation> obs;
  std::vector<KalmanObservation> kobs;
};

LinearWindow linear_window(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LinearWindow w;
  // Upwind advection with a little diffusion.
  w.M = Matrix::Zero(5, 5);
  for (Eigen::Index i = 0; i < 5; ++i) {
    w.M(i, i) = 0.7;
    w.M(i, (i + 4) % 5) = 0.2;
    w.M(i, (i + 1) % 5) = 0.1;
  }
  w.C_b = random_spd(5, rng);
  w.Q = 0.05 * random_spd(5, rng, 0.2);
  w.u_b = random_vector(5, rng);
  const std::vector<std::vector<std::size_t>> idx = {{0, 2, 4}, {1, 3}, {0, 1, 2}};
  for (const auto& ix : idx) {
    WindowObservation o{ix, random_vector(static_cast<Eigen::Index>(ix.size()), rng), Vector::Constant(static_cast<Eigen::Index>(ix.size()), 0.2)};
    Matrix H = Matrix::Zero(static_cast<Eigen::Index>(ix.size()), 5);
    for (std::size_t k = 0; k < ix.size(); ++k) H(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(ix[k])) = 1.0;
    w.kobs.push_back({o.z, H, o.r.asDiagonal()});
    w.obs.push_back(std::move(o));
  }
  return w;
}

AssimConfig window_config(const LinearWindow& w) {
  AssimConfig cfg;
  cfg.u_b = w.u_b;
  cfg.C_b = w.C_b;
  cfg.Q = w.Q;
  cfg.optimizer.grad_tolerance = 1e-11;
  cfg.optimizer.max_iterations = 1000;
  return cfg;
}

}  // namespace

TEST(Var4d, StrongMatchesSmootherInitialMean) {
  const LinearWindow w = linear_window(6);
  const auto kf = kalman_filter(w.kobs, w.M, Matrix::Zero(5, 5), w.u_b, w.C_b);
  const auto sm = rts_smoother(kf, w.M);
  const auto r = var4d(w.u_b, w.obs, window_config(w), LinearModel{w.M}, Var4dMode::strong);
  EXPECT_TRUE(r.converged);
  EXPECT_LT((r.u0 - sm.mean[0]).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_TRUE(r.eta.empty());
  ASSERT_EQ(r.trajectory.size(), 3u);
  EXPECT_LT((r.trajectory[2] - w.M * w.M * r.u0).norm(), 1e-12);
}

TEST(Var4d, WeakMatchesSmootherTrajectory) {
  const LinearWindow w = linear_window(7);
  const auto kf = kalman_filter(w.kobs, w.M, w.Q, w.u_b, w.C_b);
  const auto sm = rts_smoother(kf, w.M);
  const auto r = var4d(w.u_b, w.obs, window_config(w), LinearModel{w.M}, Var4dMode::weak);
  EXPECT_TRUE(r.converged);
  ASSERT_EQ(r.eta.size(), 2u);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_LT((r.trajectory[t] - sm.mean[t]).cwiseAbs().maxCoeff(), 1e-6) << t;
}

TEST(Var4d, ObjectiveIsNonIncreasing) {
  const LinearWindow w = linear_window(8);
  const auto r = var4d(Vector::Constant(5, 3.0), w.obs, window_config(w), LinearModel{w.M}, Var4dMode::weak);
  ASSERT_GE(r.history.size(), 2u);
  for (std::size_t k = 1; k < r.history.size(); ++k) EXPECT_LE(r.history[k], r.history[k - 1]);
  EXPECT_EQ(r.history.back(), r.objective);
}

TEST(Var4d, NoObservationsReturnsBackground) {
  const LinearWindow w = linear_window(9);
  const std::vector<WindowObservation> empty(3);
  for (auto mode : {Var4dMode::strong, Var4dMode::weak}) {
    const auto r = var4d(Vector::Constant(5, -1.0), empty, window_config(w), LinearModel{w.M}, mode);
    EXPECT_LT((r.u0 - w.u_b).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Var4d, PerfectBurgersTwinRecoversInitialState) {
  const std::size_t n = 17;
  const double h = 2 * kPi / 16.0;
  const BurgersModel model{CoarseBurgers(n, h, 0.1, 0.05), 4};
  std::vector<double> s(n);
  Vector u_star(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = -kPi + h * static_cast<double>(i);
    u_star(static_cast<Eigen::Index>(i)) = std::exp(-s[i] * s[i]);
  }
  u_star(0) = u_star(16) = 0.0;
  std::vector<WindowObservation> obs;
  std::vector<double> u(u_star.data(), u_star.data() + n);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  for (int t = 0; t < 4; ++t) {
    if (t > 0) u = model(std::span<const double>(u));
    obs.push_back({all, Eigen::Map<const Vector>(u.data(), static_cast<Eigen::Index>(n)), Vector::Constant(static_cast<Eigen::Index>(n), 1e-4)});
  }
  AssimConfig cfg;
  cfg.u_b = u_star;
  cfg.C_b = background_covariance(s, 0.1, 0.5);
  cfg.optimizer.grad_tolerance = 1e-10;
  const auto r = var4d(Vector::Zero(static_cast<Eigen::Index>(n)), obs, cfg, model, Var4dMode::strong);
  EXPECT_LT((r.u0 - u_star).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Var4d, RejectsBadInputs) {
  const LinearWindow w = linear_window(10);
  const AssimConfig cfg = window_config(w);
  const LinearModel model{w.M};
  EXPECT_THROW(var4d(Vector::Zero(4), w.obs, cfg, model, Var4dMode::strong), std::invalid_argument);
  EXPECT_THROW(var4d(w.u_b, {}, cfg, model, Var4dMode::strong), std::invalid_argument);
  auto obs = w.obs;
  obs[1].indices[0] = 9;
  EXPECT_THROW(var4d(w.u_b, obs, cfg, model, Var4dMode::strong), std::invalid_argument);
  obs = w.obs;
  obs[0].r(0) = 0.0;
  EXPECT_THROW(var4d(w.u_b, obs, cfg, model, Var4dMode::strong), std::invalid_argument);
  AssimConfig bad = cfg;
  bad.C_b(0, 0) = -1.0;
  EXPECT_THROW(var4d(w.u_b, w.obs, bad, model, Var4dMode::strong), FactorizationError);
}

TEST(Background, CovarianceIsSymmetricPositiveDefinite) {
  std::vector<double> s(33);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = -kPi + 2 * kPi * static_cast<double>(i) / 32.0;
  const Matrix C = background_covariance(s, 0.2, 0.4);
  EXPECT_EQ(C, C.transpose());
  EXPECT_NEAR(C(3, 3), 0.2 * (1 + 1e-4), 1e-15);
  EXPECT_EQ(Eigen::LLT<Matrix>(C).info(), Eigen::Success);
}

TEST(Lbfgs, MinimizesRosenbrock) {
  const ValueGradient f = [](const Vector& x, Vector& g) {
    g.resize(2);
    g(0) = -2 * (1 - x(0)) - 400 * x(0) * (x(1) - x(0) * x(0));
    g(1) = 200 * (x(1) - x(0) * x(0));
    return (1 - x(0)) * (1 - x(0)) + 100 * std::pow(x(1) - x(0) * x(0), 2);
  };
  Vector x0(2);
  x0 << -1.2, 1.0;
  const auto r = lbfgs_minimize(f, x0, LbfgsConfig{});
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.x(0), 1.0, 1e-6);
  EXPECT_NEAR(r.x(1), 1.0, 1e-6);
  for (std::size_t k = 1; k < r.history.size(); ++k) EXPECT_LE(r.history[k], r.history[k - 1]);
}

TEST(Lbfgs, ReportsIterationLimit) {
  const ValueGradient f = [](const Vector& x, Vector& g) {
    g = 2.0 * x.cwiseProduct(Vector::LinSpaced(x.size(), 1.0, 1000.0));
    return x.cwiseProduct(x).dot(Vector::LinSpaced(x.size(), 1.0, 1000.0));
  };
  LbfgsConfig cfg;
  cfg.max_iterations = 3;
  const auto r = lbfgs_minimize(f, Vector::Ones(20), cfg);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 3u);
}

TEST(Lbfgs, FailsLoudlyOnInconsistentGradient) {
  const ValueGradient f = [](const Vector& x, Vector& g) {
    g = -2.0 * x;
    return x.squaredNorm();
  };
  EXPECT_THROW(lbfgs_minimize(f, Vector::Ones(3), LbfgsConfig{}), LineSearchError);
}

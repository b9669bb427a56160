#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <unsupported/Eigen/FFT>

#include "gmid/autodiff/tape.hpp"
#include "gmid/errors.hpp"
#include "gmid/grid.hpp"

namespace gmid {

/// Viscous Burgers u_t + u u_s = lambda u_ss on [s_min, s_max] with zero
/// Dirichlet walls.
struct BurgersConfig {
  double lambda = 0.1;
  std::size_t n_internal = 256;
  double dt_internal = 1e-3;
  std::function<double(double)> ic = [](double s) { return std::exp(-s * s); };
  double bc_left = 0.0;
  double bc_right = 0.0;
  double s_min = -kPi;
  double s_max = kPi;
};

namespace detail {

inline void check_power_of_two(std::size_t n) {
  if (n < 8 || (n & (n - 1)) != 0) {
    throw std::invalid_argument("Burgers: n_internal must be a power of two >= 8");
  }
}

}  // namespace detail

/// Fourier pseudo-spectral solver on the odd extension of the domain about
/// both walls (period 2L), so u vanishes at s_min and s_max for all t > 0.
/// Nonlinear term dealiased with the 2/3 rule; integrating-factor RK4 in
/// time, exact for the diffusion part.
class SpectralBurgers {
 public:
  using Complex = std::complex<double>;

  explicit SpectralBurgers(BurgersConfig cfg) : cfg_(std::move(cfg)) {
    if (!(cfg_.lambda > 0.0)) throw std::invalid_argument("Burgers: lambda must be > 0");
    if (!(cfg_.dt_internal > 0.0)) throw std::invalid_argument("Burgers: dt_internal must be > 0");
    if (!(cfg_.s_min < cfg_.s_max)) throw std::invalid_argument("Burgers: s_min must be < s_max");
    if (cfg_.bc_left != 0.0 || cfg_.bc_right != 0.0) {
      throw std::invalid_argument("Burgers: the odd-extension scheme supports zero wall values only");
    }
    detail::check_power_of_two(cfg_.n_internal);
    const std::size_t m = extended_size();
    const double period = 2.0 * (cfg_.s_max - cfg_.s_min);
    wavenumber_.resize(m);
    dealias_.resize(m);
    const double kcut = static_cast<double>(m) / 3.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double idx = j <= m / 2 ? static_cast<double>(j) : static_cast<double>(j) - static_cast<double>(m);
      wavenumber_[j] = 2.0 * kPi * idx / period;
      dealias_[j] = std::abs(idx) < kcut && j != m / 2;
    }
    k_max_ = 2.0 * kPi * (static_cast<double>(m) / 2.0) / period;
    double sup_ic = 0.0;
    for (std::size_t i = 0; i <= cfg_.n_internal; ++i) sup_ic = std::max(sup_ic, std::abs(cfg_.ic(node(i))));
    sup_ic_ = sup_ic;
    if (advective_cfl(cfg_.dt_internal) > kCflLimit) {
      throw std::invalid_argument("Burgers: dt_internal violates the advective bound sup|ic| * k_max * dt <= " +
                                  std::to_string(kCflLimit) + " (value " +
                                  std::to_string(advective_cfl(cfg_.dt_internal)) + ")");
    }
  }

  static constexpr double kCflLimit = 2.0;

  const BurgersConfig& config() const { return cfg_; }
  std::size_t n_nodes() const { return cfg_.n_internal + 1; }
  std::size_t extended_size() const { return 2 * cfg_.n_internal; }
  double spacing() const { return (cfg_.s_max - cfg_.s_min) / static_cast<double>(cfg_.n_internal); }
  double node(std::size_t i) const { return cfg_.s_min + spacing() * static_cast<double>(i); }
  double advective_cfl(double dt) const { return sup_ic_ * k_max_ * dt; }

  /// IC on the internal nodes with the wall values forced to zero.
  std::vector<double> initial_state() const {
    std::vector<double> u(n_nodes());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = cfg_.ic(node(i));
    u.front() = 0.0;
    u.back() = 0.0;
    return u;
  }

  /// One integrating-factor RK4 step of size dt on the internal nodes.
  std::vector<double> step(std::span<const double> state, double dt) const {
    if (state.size() != n_nodes()) {
      throw std::invalid_argument("Burgers step: state length must equal n_internal + 1");
    }
    std::vector<Complex> uh = forward(state);
    advance_spectral(uh, dt);
    std::vector<double> out = inverse(uh);
    check_finite(out, dt);
    return out;
  }

  std::vector<double> step(std::span<const double> state) const { return step(state, cfg_.dt_internal); }

  /// Sine-series interpolation of internal-node values at arbitrary s.
  std::vector<double> interpolate(std::span<const double> state, std::span<const double> s_query) const {
    const std::size_t N = cfg_.n_internal;
    const double L = cfg_.s_max - cfg_.s_min;
    // Discrete sine coefficients b_k = (2/N) sum_j u_j sin(k pi j / N).
    std::vector<double> b(N, 0.0);
    const std::vector<Complex> uh = forward(state);
    const double m = static_cast<double>(extended_size());
    for (std::size_t k = 1; k < N; ++k) b[k] = -2.0 * uh[k].imag() / m;
    std::vector<double> out(s_query.size());
    for (std::size_t q = 0; q < s_query.size(); ++q) {
      const double theta = kPi * (s_query[q] - cfg_.s_min) / L;
      double acc = 0.0;
      for (std::size_t k = 1; k < N; ++k) acc += b[k] * std::sin(static_cast<double>(k) * theta);
      out[q] = acc;
    }
    return out;
  }

  /// Internal-node trajectory at the requested output times (t_out[0] = 0).
  /// Each output interval is split into equal steps no longer than dt_internal.
  std::vector<std::vector<double>> trajectory(std::span<const double> t_out) const {
    std::vector<std::vector<double>> out;
    std::vector<double> u = initial_state();
    out.push_back(u);
    for (std::size_t k = 1; k < t_out.size(); ++k) {
      const double interval = t_out[k] - t_out[k - 1];
      const std::size_t n_steps = steps_for(interval);
      const double dt = interval / static_cast<double>(n_steps);
      for (std::size_t j = 0; j < n_steps; ++j) u = step(u, dt);
      out.push_back(u);
    }
    return out;
  }

  std::size_t steps_for(double interval) const {
    return static_cast<std::size_t>(std::ceil(interval / cfg_.dt_internal - 1e-9));
  }

 private:
  std::vector<Complex> forward(std::span<const double> state) const {
    const std::size_t N = cfg_.n_internal;
    std::vector<double> ext(extended_size());
    ext[0] = 0.0;
    ext[N] = 0.0;
    for (std::size_t j = 1; j < N; ++j) {
      ext[j] = state[j];
      ext[2 * N - j] = -state[j];
    }
    std::vector<Complex> uh;
    fft_.fwd(uh, ext);
    return uh;
  }

  std::vector<double> inverse(const std::vector<Complex>& uh) const {
    std::vector<Complex> full = uh;
    std::vector<Complex> phys;
    fft_.inv(phys, full);
    std::vector<double> out(n_nodes());
    for (std::size_t j = 0; j < n_nodes(); ++j) out[j] = phys[j].real();
    out.front() = 0.0;
    out.back() = 0.0;
    return out;
  }

  // -(1/2) d/ds (u^2), dealiased.
  std::vector<Complex> nonlinear(const std::vector<Complex>& uh) const {
    const std::size_t m = uh.size();
    std::vector<Complex> phys;
    std::vector<Complex> spec = uh;
    fft_.inv(phys, spec);
    for (auto& v : phys) v = Complex(0.5 * v.real() * v.real(), 0.0);
    std::vector<Complex> out;
    fft_.fwd(out, phys);
    for (std::size_t j = 0; j < m; ++j) {
      out[j] = dealias_[j] ? Complex(0.0, -wavenumber_[j]) * out[j] : Complex(0.0, 0.0);
    }
    return out;
  }

  void advance_spectral(std::vector<Complex>& uh, double dt) const {
    const std::size_t m = uh.size();
    std::vector<double> E(m), E2(m);
    for (std::size_t j = 0; j < m; ++j) {
      E[j] = std::exp(-cfg_.lambda * wavenumber_[j] * wavenumber_[j] * dt / 2.0);
      E2[j] = E[j] * E[j];
    }
    std::vector<Complex> tmp(m);
    const std::vector<Complex> a = nonlinear(uh);
    for (std::size_t j = 0; j < m; ++j) tmp[j] = E[j] * (uh[j] + 0.5 * dt * a[j]);
    const std::vector<Complex> b = nonlinear(tmp);
    for (std::size_t j = 0; j < m; ++j) tmp[j] = E[j] * uh[j] + 0.5 * dt * b[j];
    const std::vector<Complex> c = nonlinear(tmp);
    for (std::size_t j = 0; j < m; ++j) tmp[j] = E2[j] * uh[j] + dt * E[j] * c[j];
    const std::vector<Complex> d = nonlinear(tmp);
    for (std::size_t j = 0; j < m; ++j) {
      uh[j] = E2[j] * uh[j] + dt / 6.0 * (E2[j] * a[j] + 2.0 * E[j] * (b[j] + c[j]) + d[j]);
    }
  }

  void check_finite(const std::vector<double>& u, double dt) const {
    for (double v : u) {
      if (!std::isfinite(v)) {
        throw NumericalError("Burgers: non-finite state; advective bound sup|u| * k_max * dt = " +
                             std::to_string(advective_cfl(dt)) + " must stay <= " + std::to_string(kCflLimit));
      }
    }
  }

  BurgersConfig cfg_;
  std::vector<double> wavenumber_;
  std::vector<bool> dealias_;
  double k_max_ = 0.0;
  double sup_ic_ = 0.0;
  mutable Eigen::FFT<double> fft_;
};

/// Numerical solution sampled on `grid` (which must span [s_min, s_max]).
/// Row 0 is the IC sampled on the grid; later rows interpolate the spectral
/// state, so they are exactly zero at the walls.
inline Field solve(const BurgersConfig& cfg, std::shared_ptr<const SpaceTimeGrid> grid) {
  if (std::abs(grid->s_min() - cfg.s_min) > 1e-12 || std::abs(grid->s_max() - cfg.s_max) > 1e-12) {
    throw std::invalid_argument("Burgers solve: grid must span [s_min, s_max] of the configuration");
  }
  if (grid->t(0) != 0.0) throw std::invalid_argument("Burgers solve: grid must start at t = 0");
  const SpectralBurgers solver(cfg);
  const auto traj = solver.trajectory(grid->t_nodes());
  Field out(grid);
  for (std::size_t i = 0; i < grid->n(); ++i) out.values(0, static_cast<Eigen::Index>(i)) = cfg.ic(grid->s(i));
  for (std::size_t k = 1; k < grid->T(); ++k) {
    const auto row = solver.interpolate(traj[k], grid->s_nodes());
    for (std::size_t i = 0; i < grid->n(); ++i) out.values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = row[i];
    out.values(static_cast<Eigen::Index>(k), 0) = cfg.bc_left;
    out.values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(grid->n() - 1)) = cfg.bc_right;
  }
  return out;
}

/// Exact Cole-Hopf solution u = -2 lambda phi_s / phi written as a ratio of
/// heat-kernel integrals and evaluated by adaptive Gauss-Kronrod quadrature.
///
/// `real_line` integrates the IC over the whole line. `walls` integrates the
/// IC extended oddly about both walls (the method of images), which is the
/// exact solution with u = 0 at s_min and s_max.
class ColeHopfReference {
 public:
  enum class Domain { real_line, walls };

  ColeHopfReference(double lambda, std::function<double(double)> ic, Domain domain = Domain::walls,
                    double s_min = -kPi, double s_max = kPi, double real_line_half_width = 30.0)
      : lambda_(lambda), ic_(std::move(ic)), domain_(domain) {
    if (!(lambda_ > 0.0)) throw std::invalid_argument("ColeHopfReference: lambda must be > 0");
    if (domain_ == Domain::walls) {
      lo_ = s_min;
      hi_ = s_max;
    } else {
      lo_ = -real_line_half_width;
      hi_ = real_line_half_width;
    }
    const std::size_t cells = 8192;
    h_ = (hi_ - lo_) / static_cast<double>(cells);
    cumulative_.assign(cells + 1, 0.0);
    for (std::size_t c = 0; c < cells; ++c) {
      const double a = lo_ + h_ * static_cast<double>(c);
      cumulative_[c + 1] = cumulative_[c] + gauss_legendre(a, a + h_);
    }
    f_min_ = *std::min_element(cumulative_.begin(), cumulative_.end());
    f_max_ = *std::max_element(cumulative_.begin(), cumulative_.end());
    if (domain_ == Domain::real_line) {
      // Re-anchor at 0 so F(y) = integral_0^y ic.
      const double at_zero = antiderivative_table(0.0);
      for (double& v : cumulative_) v -= at_zero;
      f_min_ -= at_zero;
      f_max_ -= at_zero;
    }
  }

  double operator()(double s, double t) const {
    if (!(t > 0.0)) throw std::invalid_argument("ColeHopfReference: t must be > 0");
    if (domain_ == Domain::walls && (s <= lo_ || s >= hi_)) return 0.0;
    const double four_lt = 4.0 * lambda_ * t;
    const double width = std::sqrt(four_lt) * std::sqrt(120.0 + (f_max_ - f_min_) / (2.0 * lambda_));
    const double shift = antiderivative(s) / (2.0 * lambda_);
    auto weight = [&](double y) {
      const double d = s - y;
      return std::exp(-(d * d / four_lt + antiderivative(y) / (2.0 * lambda_) - shift));
    };
    using Quad = boost::math::quadrature::gauss_kronrod<double, 61>;
    double err_den = 0.0, err_num = 0.0;
    // Split at s: the integrands are smooth but sharply peaked there.
    const double den = Quad::integrate(weight, s - width, s, 15, 1e-10, &err_den) +
                       Quad::integrate(weight, s, s + width, 15, 1e-10);
    const double num = Quad::integrate([&](double y) { return (s - y) * weight(y); }, s - width, s, 15, 1e-10,
                                       &err_num) +
                       Quad::integrate([&](double y) { return (s - y) * weight(y); }, s, s + width, 15, 1e-10);
    if (!std::isfinite(den) || !std::isfinite(num) || den <= 0.0 || err_den > 1e-7 * den ||
        err_num > 1e-7 * std::max(den * std::sqrt(four_lt), std::abs(num))) {
      throw NumericalError("ColeHopfReference: quadrature did not converge at s=" + std::to_string(s) +
                           ", t=" + std::to_string(t));
    }
    if (domain_ == Domain::real_line && (s - width < lo_ || s + width > hi_)) {
      throw std::invalid_argument("ColeHopfReference: query leaves the tabulated real-line range");
    }
    return num / (t * den);
  }

  /// F(y) = integral of the (extended) IC from the anchor to y.
  double antiderivative(double y) const {
    if (domain_ == Domain::real_line) return antiderivative_table(y);
    const double L = hi_ - lo_;
    double r = std::fmod(y - lo_, 2.0 * L);
    if (r < 0.0) r += 2.0 * L;
    const double folded = r <= L ? lo_ + r : lo_ + 2.0 * L - r;
    return antiderivative_table(folded);
  }

 private:
  double gauss_legendre(double a, double b) const {
    static constexpr std::array<double, 5> x = {0.0, -0.5384693101056831, 0.5384693101056831,
                                                -0.9061798459386640, 0.9061798459386640};
    static constexpr std::array<double, 5> w = {0.5688888888888889, 0.4786286704993665, 0.4786286704993665,
                                                0.2369268850561891, 0.2369268850561891};
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double acc = 0.0;
    for (std::size_t i = 0; i < 5; ++i) acc += w[i] * ic_(mid + half * x[i]);
    return acc * half;
  }

  double antiderivative_table(double y) const {
    y = std::clamp(y, lo_, hi_);
    auto c = static_cast<std::size_t>((y - lo_) / h_);
    c = std::min(c, cumulative_.size() - 2);
    const double a = lo_ + h_ * static_cast<double>(c);
    return cumulative_[c] + gauss_legendre(a, y);
  }

  double lambda_;
  std::function<double(double)> ic_;
  Domain domain_;
  double lo_ = 0.0, hi_ = 0.0, h_ = 0.0;
  double f_min_ = 0.0, f_max_ = 0.0;
  std::vector<double> cumulative_;
};

inline double cole_hopf_reference(double lambda, const std::function<double(double)>& ic, double s, double t,
                                  ColeHopfReference::Domain domain = ColeHopfReference::Domain::walls) {
  return ColeHopfReference(lambda, ic, domain)(s, t);
}

/// Coarse n-point finite-difference Burgers map for the assimilation
/// baselines: first-order upwind advection, central diffusion, RK4 in time.
/// Templated on the scalar so it can run on the autodiff tape.
class CoarseBurgers {
 public:
  enum class Boundary { dirichlet, periodic };

  CoarseBurgers(std::size_t n, double spacing, double lambda, double dt, Boundary boundary = Boundary::dirichlet)
      : n_(n), h_(spacing), lambda_(lambda), dt_(dt), boundary_(boundary) {
    if (n_ < 3) throw std::invalid_argument("CoarseBurgers: n must be >= 3");
    if (!(h_ > 0.0) || !(dt_ > 0.0) || lambda_ < 0.0) {
      throw std::invalid_argument("CoarseBurgers: spacing, dt must be > 0 and lambda >= 0");
    }
    if (diffusion_number() > kDiffusionLimit) {
      throw std::invalid_argument("CoarseBurgers: 4 lambda dt / h^2 = " + std::to_string(diffusion_number()) +
                                  " exceeds the RK4 stability limit " + std::to_string(kDiffusionLimit));
    }
  }

  static constexpr double kDiffusionLimit = 2.78;

  double diffusion_number() const { return 4.0 * lambda_ * dt_ / (h_ * h_); }
  std::size_t n() const { return n_; }
  double dt() const { return dt_; }

  template <class S>
  std::vector<S> rhs(std::span<const S> u) const {
    using ad::value_of;
    std::vector<S> out(n_, S(0.0));
    const bool periodic = boundary_ == Boundary::periodic;
    const std::size_t first = periodic ? 0 : 1, last = periodic ? n_ : n_ - 1;
    for (std::size_t i = first; i < last; ++i) {
      const S& left = u[i == 0 ? n_ - 1 : i - 1];
      const S& right = u[i + 1 == n_ ? 0 : i + 1];
      const S grad = value_of(u[i]) >= 0.0 ? (u[i] - left) / S(h_) : (right - u[i]) / S(h_);
      out[i] = -u[i] * grad + S(lambda_) * (right - S(2.0) * u[i] + left) / S(h_ * h_);
    }
    return out;
  }

  template <class S>
  std::vector<S> step(std::span<const S> u, double dt) const {
    if (u.size() != n_) throw std::invalid_argument("CoarseBurgers: state length mismatch");
    auto axpy = [&](std::span<const S> x, const std::vector<S>& k, double a) {
      std::vector<S> y(n_);
      for (std::size_t i = 0; i < n_; ++i) y[i] = x[i] + S(a) * k[i];
      return y;
    };
    const std::vector<S> k1 = rhs<S>(u);
    const std::vector<S> u2 = axpy(u, k1, 0.5 * dt);
    const std::vector<S> k2 = rhs<S>(u2);
    const std::vector<S> u3 = axpy(u, k2, 0.5 * dt);
    const std::vector<S> k3 = rhs<S>(u3);
    const std::vector<S> u4 = axpy(u, k3, dt);
    const std::vector<S> k4 = rhs<S>(u4);
    std::vector<S> out(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      out[i] = u[i] + S(dt / 6.0) * (k1[i] + S(2.0) * k2[i] + S(2.0) * k3[i] + k4[i]);
    }
    if constexpr (std::is_same_v<S, double>) {
      for (double v : out) {
        if (!std::isfinite(v)) {
          throw NumericalError("CoarseBurgers: non-finite state; check 4 lambda dt / h^2 <= 2.78 and |u| dt / h");
        }
      }
    }
    return out;
  }

  template <class S>
  std::vector<S> step(std::span<const S> u) const {
    return step<S>(u, dt_);
  }

  template <class S>
  std::vector<S> advance(std::span<const S> u, std::size_t n_steps) const {
    std::vector<S> x(u.begin(), u.end());
    for (std::size_t j = 0; j < n_steps; ++j) x = step<S>(std::span<const S>(x));
    return x;
  }

 private:
  std::size_t n_;
  double h_;
  double lambda_;
  double dt_;
  Boundary boundary_;
};

}  // namespace gmid

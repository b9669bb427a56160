#pragma once

// Test oracles shared by the unit suites and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "gmid/autodiff/dual.hpp"
#include "gmid/autodiff/tape.hpp"
#include "gmid/network.hpp"

namespace gmid::oracle {

/// Central differences with h = 1e-5 (1 + |x_i|).
inline std::vector<double> fd_gradient(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x) {
  std::vector<double> g(x.size()), xp(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = 1e-5 * (1.0 + std::abs(x[i]));
    xp[i] = x[i] + h;
    const double up = f(xp);
    xp[i] = x[i] - h;
    const double dn = f(xp);
    xp[i] = x[i];
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

inline double rel_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0}); }

inline double max_rel_error(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_error(a[i], b[i]));
  return m;
}

/// Random expression DAG over n inputs built from the differentiable
/// primitives, evaluated generically so the same tree runs on double and on
/// tape variables. Domains are kept safe (log and sqrt see 1 + x^2).
class RandomExpression {
 public:
  enum class Op { input, constant, add, sub, mul, div, exp, log, sqrt, tanh, sin, cos, pow, square, log1p };

  struct Node {
    Op op;
    std::size_t a = 0, b = 0;
    double c = 0.0;
  };

  RandomExpression(std::size_t n_inputs, std::size_t n_ops, std::uint64_t seed) : n_(n_inputs) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t i = 0; i < n_inputs; ++i) nodes_.push_back({Op::input, i, 0, 0.0});
    nodes_.push_back({Op::constant, 0, 0, 0.5 + 0.5 * u(rng)});
    for (std::size_t k = 0; k < n_ops; ++k) {
      const auto op = static_cast<Op>(2 + rng() % 13);
      std::uniform_int_distribution<std::size_t> pick(0, nodes_.size() - 1);
      const std::size_t a = pick(rng);
      const std::size_t b = pick(rng);
      nodes_.push_back({op, a, b, 1.0 + 0.5 * u(rng)});
    }
    // Fold in every input so no gradient entry is structurally zero.
    for (std::size_t i = 0; i < n_inputs; ++i) nodes_.push_back({Op::add, nodes_.size() - 1, i, 0.0});
  }

  std::size_t n_inputs() const { return n_; }

  template <class T>
  T operator()(std::span<const T> x) const {
    using std::exp, std::log, std::sqrt, std::tanh, std::sin, std::cos, std::pow, std::log1p;
    std::vector<T> v;
    v.reserve(nodes_.size());
    for (const Node& nd : nodes_) {
      switch (nd.op) {
        case Op::input: v.push_back(x[nd.a]); break;
        case Op::constant: v.push_back(T(nd.c)); break;
        case Op::add: v.push_back(v[nd.a] + v[nd.b]); break;
        case Op::sub: v.push_back(v[nd.a] - v[nd.b]); break;
        case Op::mul: v.push_back(v[nd.a] * v[nd.b]); break;
        case Op::div: v.push_back(v[nd.a] / (T(1.0) + v[nd.b] * v[nd.b])); break;
        case Op::exp: v.push_back(exp(tanh(v[nd.a]))); break;
        case Op::log: v.push_back(log(T(1.0) + v[nd.a] * v[nd.a])); break;
        case Op::sqrt: v.push_back(sqrt(T(nd.c) + v[nd.a] * v[nd.a])); break;
        case Op::tanh: v.push_back(tanh(v[nd.a])); break;
        case Op::sin: v.push_back(sin(v[nd.a])); break;
        case Op::cos: v.push_back(cos(v[nd.a])); break;
        case Op::pow: v.push_back(pow(T(1.0) + v[nd.a] * v[nd.a], 0.75)); break;
        case Op::square: v.push_back(tanh(v[nd.a]) * tanh(v[nd.a])); break;
        case Op::log1p: v.push_back(log1p(v[nd.a] * v[nd.a])); break;
      }
    }
    return v.back();
  }

 private:
  std::size_t n_;
  std::vector<Node> nodes_;
};

/// Squared Burgers residuals of a tanh network at a few points, written
/// with input derivatives inside the objective.
template <class S>
S nested_residual_objective(const NeuralNetSpec& spec, std::span<const S> theta, double lambda) {
  auto net = [&spec](const ad::DualSecond<S>& s, const ad::DualSecond<S>& t, std::span<const S> p) {
    return nn_forward_generic<S, ad::DualSecond<S>>(spec, p, s, t);
  };
  S total(0.0);
  const double pts[][2] = {{-2.0, 0.3}, {-0.5, 1.7}, {0.4, 2.5}, {1.9, 4.1}, {2.8, 0.9}};
  for (const auto& pt : pts) {
    const auto d = ad::input_derivs<S>(net, pt[0], pt[1], theta);
    const S r = d.du_dt + d.u * d.du_ds - S(lambda) * d.d2u_ds2;
    total = total + r * r;
  }
  return total;
}

// Conditional mean of x[free] given x[fixed] = values, by explicit
// partitioned-covariance algebra.
inline Vector condition(const Vector& mean, const Matrix& cov, const std::vector<Eigen::Index>& fixed, const Vector& values) {
  std::vector<Eigen::Index> free;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    if (std::find(fixed.begin(), fixed.end(), i) == fixed.end()) free.push_back(i);
  }
  const auto nf = static_cast<Eigen::Index>(free.size()), no = static_cast<Eigen::Index>(fixed.size());
  Matrix S12(nf, no), S22(no, no);
  Vector m1(nf), d(no);
  for (Eigen::Index a = 0; a < nf; ++a) {
    m1(a) = mean(free[a]);
    for (Eigen::Index b = 0; b < no; ++b) S12(a, b) = cov(free[a], fixed[b]);
  }
  for (Eigen::Index a = 0; a < no; ++a) {
    d(a) = values(a) - mean(fixed[a]);
    for (Eigen::Index b = 0; b < no; ++b) S22(a, b) = cov(fixed[a], fixed[b]);
  }
  return m1 + S12 * S22.fullPivLu().solve(d);
}

}  // namespace gmid::oracle

#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gmid/errors.hpp"
#include "gmid/grid.hpp"

namespace gmid {

/// Objective returning f(x) and writing its gradient.
using ValueGradient = std::function<double(const Vector& x, Vector& grad)>;

struct LbfgsConfig {
  std::size_t max_iterations = 500;
  std::size_t memory = 10;
  double grad_tolerance = 1e-8;
  double armijo_c1 = 1e-4;
  double backtrack = 0.5;
  std::size_t max_backtracks = 60;
  std::size_t max_restarts = 3;
};

struct LbfgsResult {
  Vector x;
  double value = 0.0;
  double grad_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  /// Objective after each accepted step, starting with f(x0).
  std::vector<double> history;
};

class LineSearchError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Limited-memory BFGS minimization with Armijo backtracking. A failed line
/// search drops the curvature memory and retries along steepest descent; it
/// raises LineSearchError after `max_restarts` consecutive failures.
inline LbfgsResult lbfgs_minimize(const ValueGradient& f, Vector x0, const LbfgsConfig& cfg = {}) {
  LbfgsResult res;
  res.x = std::move(x0);
  Vector g(res.x.size());
  res.value = f(res.x, g);
  if (!std::isfinite(res.value) || !g.allFinite()) throw NumericalError("lbfgs: objective not finite at start");
  res.history.push_back(res.value);
  std::deque<Vector> S, Y;
  std::size_t restarts = 0;
  for (res.iterations = 0; res.iterations < cfg.max_iterations; ++res.iterations) {
    res.grad_norm = g.norm();
    if (res.grad_norm <= cfg.grad_tolerance) {
      res.converged = true;
      return res;
    }
    // Two-loop recursion.
    Vector q = g;
    std::vector<double> alpha(S.size());
    for (std::size_t k = S.size(); k-- > 0;) {
      alpha[k] = S[k].dot(q) / Y[k].dot(S[k]);
      q -= alpha[k] * Y[k];
    }
    if (!S.empty()) q *= S.back().dot(Y.back()) / Y.back().squaredNorm();
    else q /= std::max(1.0, res.grad_norm);
    for (std::size_t k = 0; k < S.size(); ++k) {
      const double b = Y[k].dot(q) / Y[k].dot(S[k]);
      q += S[k] * (alpha[k] - b);
    }
    Vector dir = -q;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      S.clear();
      Y.clear();
      dir = -g / std::max(1.0, res.grad_norm);
      slope = g.dot(dir);
    }
    double step = 1.0;
    Vector x_new, g_new(g.size());
    double f_new = 0.0;
    bool accepted = false;
    for (std::size_t b = 0; b < cfg.max_backtracks; ++b) {
      x_new = res.x + step * dir;
      f_new = f(x_new, g_new);
      if (x_new == res.x) break;
      if (std::isfinite(f_new) && g_new.allFinite() && f_new <= res.value + cfg.armijo_c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= cfg.backtrack;
    }
    if (!accepted) {
      if (S.empty() && ++restarts > cfg.max_restarts) {
        throw LineSearchError("lbfgs: line search failed after " + std::to_string(cfg.max_restarts) +
                              " restarts (gradient norm " + std::to_string(res.grad_norm) + ")");
      }
      S.clear();
      Y.clear();
      continue;
    }
    restarts = 0;
    Vector s = x_new - res.x, y = g_new - g;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      if (S.size() > cfg.memory) {
        S.pop_front();
        Y.pop_front();
      }
    }
    const double prev = res.value;
    res.x = std::move(x_new);
    g = g_new;
    res.value = f_new;
    res.history.push_back(f_new);
    if (prev - f_new <= 1e-15 * std::max(1.0, std::abs(prev)) && g.norm() <= std::sqrt(cfg.grad_tolerance)) {
      res.grad_norm = g.norm();
      res.converged = true;
      ++res.iterations;
      return res;
    }
  }
  res.grad_norm = g.norm();
  res.converged = res.grad_norm <= cfg.grad_tolerance;
  return res;
}

}  // namespace gmid

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gmid/config.hpp"
#include "gmid/model.hpp"
#include "gmid/nuts.hpp"
#include "gmid/optimize.hpp"
#include "gmid/rng.hpp"
#include "gmid/simulator.hpp"

namespace gmid {

inline ObservationData observation_data(const SimulationTruth& truth) {
  return {truth.observations, truth.covariates};
}

/// Network weights from 0.1 x their prior draw; beta at its prior mean;
/// lambda = 0.5; bounded hyperparameters at the midpoint of their bounds.
inline std::vector<double> initial_point(const BpinnModel& model, const FitOptions& opt, std::uint64_t seed) {
  std::vector<double> y(model.dim(), 0.0);
  Rng rng = make_rng(seed, stream::network_init);
  NormalSampler normal;
  const PriorConfig& pr = model.config().prior;
  for (std::size_t j = 0; j < model.n_weights(); ++j) {
    y[j] = opt.init_scale * (pr.mu_W + std::sqrt(pr.c_W) * normal(rng));
  }
  for (std::size_t j = 0; j < model.n_beta(); ++j) y[model.n_weights() + j] = pr.mu_beta;
  y[model.lambda_index()] = std::log(0.5);
  return y;
}

struct FitResult {
  PosteriorSamples samples;
  std::vector<double> init;
  double init_log_density = 0.0;
  std::size_t init_optimize_iterations = 0;
};

/// Optional L-BFGS ascent of the unconstrained log density, then NUTS.
inline FitResult fit_model(const BpinnModel& model, const NutsConfig& nuts, const FitOptions& opt) {
  FitResult out;
  std::vector<double> y = initial_point(model, opt, nuts.seed);
  const LogDensityGradient f = [&model](std::span<const double> q, std::span<double> g) {
    return model.log_density_gradient(q, g);
  };
  if (opt.init_optimize_iters > 0) {
    const ValueGradient neg = [&model](const Vector& x, Vector& g) {
      g.resize(x.size());
      const double v = model.log_density_gradient(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                                                  std::span<double>(g.data(), static_cast<std::size_t>(g.size())));
      g = -g;
      return -v;
    };
    LbfgsConfig lc;
    lc.max_iterations = opt.init_optimize_iters;
    lc.grad_tolerance = 1e-6;
    Vector x0 = Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(y.size()));
    try {
      const LbfgsResult r = lbfgs_minimize(neg, x0, lc);
      y.assign(r.x.data(), r.x.data() + r.x.size());
      out.init_optimize_iterations = r.iterations;
    } catch (const LineSearchError&) {
      // Keep the prior-based start; the sampler's warmup takes over.
    }
  }
  out.init = y;
  out.init_log_density = model.log_density(y);
  out.samples = nuts_sample(f, Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(y.size())), nuts);
  return out;
}

/// Constrained columns (beta..., lambda, sigma_d, sigma2_nu, ell_nu, then
/// network weights when requested), one entry per draw.
inline std::vector<std::vector<double>> constrained_columns(const BpinnModel& model, const PosteriorSamples& s,
                                                            bool with_weights) {
  const std::size_t n_scalar = model.n_beta() + 4;
  std::vector<std::vector<double>> cols(n_scalar + (with_weights ? model.n_weights() : 0));
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::vector<double> y(s.dim());
    for (std::size_t j = 0; j < s.dim(); ++j) y[j] = s.draws(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    const ParameterVector p = model.constrain(y);
    std::size_t c = 0;
    for (double b : p.beta) cols[c++].push_back(b);
    cols[c++].push_back(p.lambda);
    cols[c++].push_back(p.sigma_d);
    cols[c++].push_back(p.sigma2_nu);
    cols[c++].push_back(p.ell_nu);
    if (with_weights) {
      for (double w : p.theta_W) cols[c++].push_back(w);
    }
  }
  return cols;
}

inline std::vector<std::string> constrained_names(const BpinnModel& model, bool with_weights) {
  std::vector<std::string> names = model.scalar_names();
  if (with_weights) {
    for (std::size_t j = 0; j < model.n_weights(); ++j) names.push_back("w" + std::to_string(j));
  }
  return names;
}

}  // namespace gmid

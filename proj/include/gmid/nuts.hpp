#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gmid/errors.hpp"
#include "gmid/grid.hpp"
#include "gmid/rng.hpp"

namespace gmid {

/// Log density at q; writes d log p / dq into grad.
using LogDensityGradient = std::function<double(std::span<const double> q, std::span<double> grad)>;

struct NutsConfig {
  std::size_t n_warmup = 1000;
  std::size_t n_samples = 1000;
  std::size_t max_tree_depth = 10;
  double target_accept = 0.8;
  std::uint64_t seed = 0;
  std::size_t n_chains = 1;
  /// 0 picks the step size by the doubling/halving heuristic.
  double init_step_size = 0.0;
  double max_delta_energy = 1000.0;
  bool parallel_chains = true;
  /// Adapt a dense inverse metric instead of a diagonal one.
  bool dense_metric = false;

  void validate() const {
    if (max_tree_depth < 1 || max_tree_depth > 12) throw std::invalid_argument("NutsConfig: max_tree_depth must be in [1, 12]");
    if (!(target_accept > 0.0 && target_accept < 1.0)) throw std::invalid_argument("NutsConfig: target_accept must be in (0, 1)");
    if (n_chains < 1) throw std::invalid_argument("NutsConfig: n_chains must be >= 1");
    if (init_step_size < 0.0) throw std::invalid_argument("NutsConfig: init_step_size must be >= 0");
  }
};

struct ChainStats {
  double step_size = 0.0;
  /// Adapted inverse metric (diagonal, or full matrix when dense).
  Matrix inv_metric;
  double accept_rate = 0.0;
  std::size_t divergences = 0;
  std::size_t warmup_divergences = 0;
  std::size_t n_leapfrog = 0;
  std::size_t max_depth_hits = 0;
};

/// Draws in unconstrained space, chain-major: rows [c * n_per_chain, (c+1) * n_per_chain).
struct PosteriorSamples {
  Matrix draws;
  std::vector<double> log_density;
  std::vector<double> accept_stat;
  std::vector<int> tree_depth;
  std::vector<bool> divergent;
  std::size_t n_chains = 0;
  std::size_t n_per_chain = 0;
  std::vector<ChainStats> chains;

  std::size_t dim() const { return static_cast<std::size_t>(draws.cols()); }
  std::size_t size() const { return static_cast<std::size_t>(draws.rows()); }

  std::size_t divergences() const {
    std::size_t n = 0;
    for (const auto& c : chains) n += c.divergences;
    return n;
  }
  double accept_rate() const {
    if (accept_stat.empty()) return 0.0;
    double s = 0.0;
    for (double a : accept_stat) s += a;
    return s / static_cast<double>(accept_stat.size());
  }
  Eigen::Block<const Matrix> chain(std::size_t c) const {
    return draws.middleRows(static_cast<Eigen::Index>(c * n_per_chain), static_cast<Eigen::Index>(n_per_chain));
  }
};

class SamplerError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Position, momentum and cached density/gradient of a Hamiltonian state.
struct PhasePoint {
  Vector q, p, grad;
  double logp = 0.0;
};

inline void eval_point(const LogDensityGradient& f, PhasePoint& z) {
  z.grad.resize(z.q.size());
  z.logp = f(std::span<const double>(z.q.data(), static_cast<std::size_t>(z.q.size())),
             std::span<double>(z.grad.data(), static_cast<std::size_t>(z.grad.size())));
  if (!std::isfinite(z.logp) || !z.grad.allFinite()) z.logp = -std::numeric_limits<double>::infinity();
}

/// Euclidean metric: kinetic energy p' C p / 2 for an inverse metric C,
/// stored as a diagonal or as a full matrix with its Cholesky factor.
class Metric {
 public:
  explicit Metric(Eigen::Index dim) : diag_(Vector::Ones(dim)) {}
  explicit Metric(Vector diag) : diag_(std::move(diag)) {}
  explicit Metric(const Matrix& cov) : dense_(true), cov_(cov) {
    const Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) throw SamplerError("Metric: inverse metric is not positive definite");
    upper_ = llt.matrixU();
  }

  bool dense() const { return dense_; }

  Vector velocity(const Vector& p) const { return dense_ ? Vector(cov_ * p) : Vector(diag_.cwiseProduct(p)); }

  double kinetic(const Vector& p) const { return 0.5 * p.dot(velocity(p)); }

  /// p ~ N(0, C^-1).
  Vector sample_momentum(Eigen::Index dim, Rng& rng, NormalSampler& normal) const {
    Vector z(dim);
    for (Eigen::Index i = 0; i < dim; ++i) z(i) = normal(rng);
    if (dense_) return upper_.triangularView<Eigen::Upper>().solve(z);
    return z.cwiseQuotient(diag_.cwiseSqrt());
  }

  Matrix as_matrix() const { return dense_ ? cov_ : Matrix(diag_); }

 private:
  bool dense_ = false;
  Vector diag_;
  Matrix cov_;
  Matrix upper_;
};

/// One velocity-Verlet step.
inline void leapfrog(const LogDensityGradient& f, PhasePoint& z, double eps, const Metric& metric) {
  z.p += 0.5 * eps * z.grad;
  z.q += eps * metric.velocity(z.p);
  eval_point(f, z);
  z.p += 0.5 * eps * z.grad;
}

inline double hamiltonian(const PhasePoint& z, const Metric& metric) { return -z.logp + metric.kinetic(z.p); }

namespace detail {

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Multinomial NUTS with the generalized U-turn criterion on p-sharp.
class NutsKernel {
 public:
  NutsKernel(const LogDensityGradient& f, std::size_t max_depth, double max_delta_energy)
      : f_(f), max_depth_(max_depth), max_dH_(max_delta_energy) {}

  struct Transition {
    PhasePoint z;
    double accept_stat = 0.0;
    int depth = 0;
    std::size_t n_leapfrog = 0;
    bool divergent = false;
  };

  Transition transition(const PhasePoint& z0_in, double eps, const Metric& minv, Rng& rng, NormalSampler& normal) {
    eps_ = eps;
    minv_ = &minv;
    divergent_ = false;
    n_leapfrog_ = 0;
    sum_metro_ = 0.0;

    PhasePoint z0 = z0_in;
    z0.p = minv.sample_momentum(z0.q.size(), rng, normal);
    H0_ = hamiltonian(z0, minv);

    PhasePoint z_fwd = z0, z_bck = z0, z_sample = z0, z_propose = z0;
    Vector p_fwd_fwd = z0.p, p_fwd_bck = z0.p, p_bck_fwd = z0.p, p_bck_bck = z0.p;
    Vector ps_fwd_fwd = minv.velocity(z0.p), ps_fwd_bck = ps_fwd_fwd, ps_bck_fwd = ps_fwd_fwd,
           ps_bck_bck = ps_fwd_fwd;
    Vector rho = z0.p;
    double log_sum_weight = 0.0;
    int depth = 0;

    while (static_cast<std::size_t>(depth) < max_depth_) {
      Vector rho_fwd = Vector::Zero(rho.size()), rho_bck = Vector::Zero(rho.size());
      bool valid = false;
      double lsw_subtree = -std::numeric_limits<double>::infinity();
      if (NormalSampler::uniform01(rng) > 0.5) {
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        ps_bck_fwd = ps_fwd_bck;
        PhasePoint z = z_fwd;
        valid = build_tree(depth, z, z_propose, ps_fwd_bck, ps_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd, lsw_subtree, 1.0, rng);
        z_fwd = std::move(z);
      } else {
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        ps_fwd_bck = ps_bck_fwd;
        PhasePoint z = z_bck;
        valid = build_tree(depth, z, z_propose, ps_bck_fwd, ps_bck_bck, rho_bck, p_bck_fwd, p_bck_bck, lsw_subtree, -1.0, rng);
        z_bck = std::move(z);
      }
      if (!valid) break;
      ++depth;
      if (lsw_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (NormalSampler::uniform01(rng) < std::exp(lsw_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
      rho = rho_bck + rho_fwd;
      bool persist = criterion(ps_bck_bck, ps_fwd_fwd, rho);
      persist = persist && criterion(ps_bck_bck, ps_fwd_bck, rho_bck + p_fwd_bck);
      persist = persist && criterion(ps_bck_fwd, ps_fwd_fwd, rho_fwd + p_bck_fwd);
      if (!persist) break;
    }

    Transition out;
    out.z = std::move(z_sample);
    out.z.p.setZero();
    out.depth = depth;
    out.n_leapfrog = n_leapfrog_;
    out.divergent = divergent_;
    out.accept_stat = n_leapfrog_ ? sum_metro_ / static_cast<double>(n_leapfrog_) : 0.0;
    return out;
  }

 private:
  static bool criterion(const Vector& ps_minus, const Vector& ps_plus, const Vector& rho) {
    return ps_plus.dot(rho) > 0.0 && ps_minus.dot(rho) > 0.0;
  }

  bool build_tree(int depth, PhasePoint& z, PhasePoint& z_propose, Vector& ps_beg, Vector& ps_end, Vector& rho,
                  Vector& p_beg, Vector& p_end, double& log_sum_weight, double direction, Rng& rng) {
    if (depth == 0) {
      leapfrog(f_, z, direction * eps_, *minv_);
      ++n_leapfrog_;
      double h = hamiltonian(z, *minv_);
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      if (h - H0_ > max_dH_) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, H0_ - h);
      sum_metro_ += H0_ - h > 0.0 ? 1.0 : std::exp(H0_ - h);
      z_propose = z;
      ps_beg = minv_->velocity(z.p);
      ps_end = ps_beg;
      rho += z.p;
      p_beg = z.p;
      p_end = p_beg;
      return !divergent_;
    }

    const auto n = z.q.size();
    Vector ps_init_end(n), p_init_end(n), rho_init = Vector::Zero(n);
    double lsw_init = -std::numeric_limits<double>::infinity();
    if (!build_tree(depth - 1, z, z_propose, ps_beg, ps_init_end, rho_init, p_beg, p_init_end, lsw_init, direction, rng)) {
      return false;
    }
    PhasePoint z_propose_final = z;
    Vector ps_final_beg(n), p_final_beg(n), rho_final = Vector::Zero(n);
    double lsw_final = -std::numeric_limits<double>::infinity();
    if (!build_tree(depth - 1, z, z_propose_final, ps_final_beg, ps_end, rho_final, p_final_beg, p_end, lsw_final,
                    direction, rng)) {
      return false;
    }
    const double lsw_subtree = log_sum_exp(lsw_init, lsw_final);
    log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
    if (lsw_final > lsw_subtree) {
      z_propose = z_propose_final;
    } else if (NormalSampler::uniform01(rng) < std::exp(lsw_final - lsw_subtree)) {
      z_propose = z_propose_final;
    }
    const Vector rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(ps_beg, ps_end, rho_subtree);
    persist = persist && criterion(ps_beg, ps_final_beg, rho_init + p_final_beg);
    persist = persist && criterion(ps_init_end, ps_end, rho_final + p_init_end);
    return persist;
  }

  const LogDensityGradient& f_;
  std::size_t max_depth_;
  double max_dH_;
  double eps_ = 0.1;
  const Metric* minv_ = nullptr;
  double H0_ = 0.0;
  bool divergent_ = false;
  std::size_t n_leapfrog_ = 0;
  double sum_metro_ = 0.0;
};

/// Nesterov dual averaging of log step size toward a target acceptance.
class DualAveraging {
 public:
  explicit DualAveraging(double delta, double gamma = 0.05, double t0 = 10.0, double kappa = 0.75)
      : delta_(delta), gamma_(gamma), t0_(t0), kappa_(kappa) {}

  void restart(double eps) {
    mu_ = std::log(10.0 * eps);
    counter_ = 0.0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }

  double update(double accept_stat) {
    counter_ += 1.0;
    accept_stat = std::min(1.0, accept_stat);
    const double eta = 1.0 / (counter_ + t0_);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(counter_) / gamma_;
    const double x_eta = std::pow(counter_, -kappa_);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }

  double final_step_size() const { return std::exp(x_bar_); }

 private:
  double delta_, gamma_, t0_, kappa_;
  double mu_ = 0.0, counter_ = 0.0, s_bar_ = 0.0, x_bar_ = 0.0;
};

/// Doubles or halves eps until a single leapfrog step crosses acceptance 0.8.
inline double find_reasonable_step_size(const LogDensityGradient& f, const PhasePoint& z_in, double eps,
                                        const Metric& minv, Rng& rng, NormalSampler& normal) {
  PhasePoint z = z_in;
  z.p = minv.sample_momentum(z.q.size(), rng, normal);
  const double H0 = hamiltonian(z, minv);
  PhasePoint trial = z;
  leapfrog(f, trial, eps, minv);
  double h = hamiltonian(trial, minv);
  if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
  const int direction = H0 - h > std::log(0.8) ? 1 : -1;
  for (int k = 0; k < 100; ++k) {
    const double next = direction == 1 ? 2.0 * eps : 0.5 * eps;
    trial = z;
    leapfrog(f, trial, next, minv);
    h = hamiltonian(trial, minv);
    if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
    const double dH = H0 - h;
    if (direction == 1 && !(dH > std::log(0.8))) break;
    eps = next;
    if (direction == -1 && dH > std::log(0.8)) break;
    if (eps > 1e7 || eps < 1e-12) break;
  }
  return eps;
}

/// Slow-window end iterations (exclusive) for windowed metric adaptation.
inline std::vector<std::size_t> metric_window_ends(std::size_t n_warmup) {
  std::vector<std::size_t> ends;
  if (n_warmup < 20) return ends;
  const std::size_t init = n_warmup * 15 / 100, term = n_warmup / 10;
  const std::size_t slow_end = n_warmup - term;
  std::size_t window = std::min<std::size_t>(25, slow_end - init);
  std::size_t start = init;
  while (start < slow_end) {
    std::size_t end = start + window;
    // The final window absorbs a remainder too short to double into.
    if (end + 2 * window > slow_end) end = slow_end;
    ends.push_back(end);
    start = end;
    window *= 2;
  }
  return ends;
}

struct ChainResult {
  Matrix draws;
  std::vector<double> log_density, accept_stat;
  std::vector<int> tree_depth;
  std::vector<bool> divergent;
  ChainStats stats;
};

inline ChainResult run_chain(const LogDensityGradient& f, const Vector& init, const NutsConfig& cfg, std::size_t chain) {
  Rng rng = make_rng(substream_seed(cfg.seed, stream::sampler), chain);
  NormalSampler normal;
  const auto d = init.size();
  Metric minv(d);
  PhasePoint z;
  z.q = init;
  z.p = Vector::Zero(d);
  eval_point(f, z);
  if (!std::isfinite(z.logp)) throw std::invalid_argument("nuts_sample: log density is not finite at the initial point");

  double eps = cfg.init_step_size > 0.0 ? cfg.init_step_size : find_reasonable_step_size(f, z, 1.0, minv, rng, normal);
  DualAveraging da(cfg.target_accept);
  da.restart(eps);
  const std::vector<std::size_t> window_ends = metric_window_ends(cfg.n_warmup);
  std::size_t next_window = 0;
  const std::size_t slow_begin = cfg.n_warmup * 15 / 100;
  Vector w_mean = Vector::Zero(d);
  Matrix w_m2 = cfg.dense_metric ? Matrix::Zero(d, d) : Matrix::Zero(d, 1);
  std::size_t w_n = 0;

  NutsKernel kernel(f, cfg.max_tree_depth, cfg.max_delta_energy);
  ChainResult res;
  res.draws.resize(static_cast<Eigen::Index>(cfg.n_samples), d);
  double accept_sum = 0.0;

  for (std::size_t it = 0; it < cfg.n_warmup + cfg.n_samples; ++it) {
    auto tr = kernel.transition(z, eps, minv, rng, normal);
    z = std::move(tr.z);
    res.stats.n_leapfrog += tr.n_leapfrog;
    if (static_cast<std::size_t>(tr.depth) >= cfg.max_tree_depth) ++res.stats.max_depth_hits;
    if (it < cfg.n_warmup) {
      if (tr.divergent) ++res.stats.warmup_divergences;
      eps = da.update(tr.accept_stat);
      if (next_window < window_ends.size() && it >= slow_begin) {
        ++w_n;
        const Vector delta = z.q - w_mean;
        w_mean += delta / static_cast<double>(w_n);
        if (cfg.dense_metric) w_m2.noalias() += delta * (z.q - w_mean).transpose();
        else w_m2.col(0) += delta.cwiseProduct(z.q - w_mean);
        if (it + 1 == window_ends[next_window]) {
          const double n = static_cast<double>(w_n);
          if (w_n >= 2) {
            const double shrink = n / (n + 5.0), ridge = 1e-3 * (5.0 / (n + 5.0));
            if (cfg.dense_metric) {
              Matrix cov = shrink * (w_m2 / (n - 1.0));
              cov = 0.5 * (cov + cov.transpose());
              cov.diagonal().array() += ridge;
              minv = Metric(cov);
            } else {
              minv = Metric(Vector((shrink * (w_m2.col(0) / (n - 1.0))).array() + ridge));
            }
          }
          w_mean.setZero();
          w_m2.setZero();
          w_n = 0;
          ++next_window;
          eps = find_reasonable_step_size(f, z, eps, minv, rng, normal);
          da.restart(eps);
        }
      }
      if (it + 1 == cfg.n_warmup) {
        eps = da.final_step_size();
        if (res.stats.warmup_divergences == cfg.n_warmup || !(eps > 1e-12) || !std::isfinite(eps)) {
          throw SamplerError("nuts_sample: warmup failed on chain " + std::to_string(chain) + " (step size " +
                             std::to_string(eps) + ", " + std::to_string(res.stats.warmup_divergences) + "/" +
                             std::to_string(cfg.n_warmup) + " divergent transitions)");
        }
      }
    } else {
      const std::size_t k = it - cfg.n_warmup;
      res.draws.row(static_cast<Eigen::Index>(k)) = z.q.transpose();
      res.log_density.push_back(z.logp);
      res.accept_stat.push_back(tr.accept_stat);
      res.tree_depth.push_back(tr.depth);
      res.divergent.push_back(tr.divergent);
      if (tr.divergent) ++res.stats.divergences;
      accept_sum += tr.accept_stat;
    }
  }
  res.stats.step_size = eps;
  res.stats.inv_metric = minv.as_matrix();
  res.stats.accept_rate = cfg.n_samples ? accept_sum / static_cast<double>(cfg.n_samples) : 0.0;
  return res;
}

}  // namespace detail

/// NUTS with windowed diagonal-metric and dual-averaging step-size
/// adaptation. Chains use independent seed substreams and are merged in
/// chain order, so the result does not depend on scheduling.
inline PosteriorSamples nuts_sample(const LogDensityGradient& f, const Vector& init, const NutsConfig& cfg) {
  cfg.validate();
  if (init.size() == 0) throw std::invalid_argument("nuts_sample: empty initial point");
  std::vector<detail::ChainResult> results(cfg.n_chains);
  if (cfg.parallel_chains && cfg.n_chains > 1) {
    std::vector<std::future<detail::ChainResult>> jobs;
    for (std::size_t c = 0; c < cfg.n_chains; ++c) {
      jobs.push_back(std::async(std::launch::async, [&f, &init, &cfg, c] { return detail::run_chain(f, init, cfg, c); }));
    }
    for (std::size_t c = 0; c < cfg.n_chains; ++c) results[c] = jobs[c].get();
  } else {
    for (std::size_t c = 0; c < cfg.n_chains; ++c) results[c] = detail::run_chain(f, init, cfg, c);
  }
  PosteriorSamples out;
  out.n_chains = cfg.n_chains;
  out.n_per_chain = cfg.n_samples;
  out.draws.resize(static_cast<Eigen::Index>(cfg.n_chains * cfg.n_samples), init.size());
  for (std::size_t c = 0; c < cfg.n_chains; ++c) {
    auto& r = results[c];
    out.draws.middleRows(static_cast<Eigen::Index>(c * cfg.n_samples), static_cast<Eigen::Index>(cfg.n_samples)) = r.draws;
    out.log_density.insert(out.log_density.end(), r.log_density.begin(), r.log_density.end());
    out.accept_stat.insert(out.accept_stat.end(), r.accept_stat.begin(), r.accept_stat.end());
    out.tree_depth.insert(out.tree_depth.end(), r.tree_depth.begin(), r.tree_depth.end());
    out.divergent.insert(out.divergent.end(), r.divergent.begin(), r.divergent.end());
    out.chains.push_back(std::move(r.stats));
  }
  return out;
}

}  // namespace gmid

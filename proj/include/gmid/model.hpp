#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "gmid/errors.hpp"
#include "gmid/gp.hpp"
#include "gmid/grid.hpp"
#include "gmid/network.hpp"

namespace gmid {

/// Prior hyperparameters. Truncated-Cauchy and truncated-normal
/// normalizing constants are fixed by the bounds and dropped.
struct PriorConfig {
  double mu_W = 0.0;
  double c_W = 1.0;
  double mu_beta = 0.0;
  double c_beta = 10.0;
  double mu_lambda = 0.0;
  double sigma2_lambda = 1.0;
  // sigma_d (standard-deviation scale) ~ Cauchy(mu_d, gamma_d) on (lower_d, upper_d)
  double mu_d = 0.0;
  double gamma_d = 1.0;
  double lower_d = 0.1;
  double upper_d = 0.3;
  // sigma2_nu ~ Cauchy(mu_nu, gamma_nu) on (lower_nu, upper_nu)
  double mu_nu = 0.0;
  double gamma_nu = 1.0;
  double lower_nu = 0.02;
  double upper_nu = 0.1;
  // ell_nu ~ N(mu_ell, sigma2_ell) on (lower_ell, upper_ell)
  double mu_ell = 0.0;
  double sigma2_ell = 1.0;
  double lower_ell = 0.05;
  double upper_ell = 0.2;
};

/// Pseudo-observation sites for the PDE residual, wall and initial-condition
/// terms together with their fixed variances.
struct CollocationSet {
  std::vector<Coord> interior;
  std::vector<Coord> boundary;
  std::vector<Coord> ic;
  double sigma2_r = 0.05 * 0.05;
  double sigma2_bc = 0.01 * 0.01;
  double sigma2_ic = 0.01 * 0.01;

  /// Residual points at every grid node off the spatial walls (all times),
  /// wall points at every time on both walls, IC points at every node.
  static CollocationSet from_grid(const SpaceTimeGrid& grid, double sigma2_r = 0.05 * 0.05,
                                  double sigma2_bc = 0.01 * 0.01, double sigma2_ic = 0.01 * 0.01) {
    CollocationSet c;
    c.sigma2_r = sigma2_r;
    c.sigma2_bc = sigma2_bc;
    c.sigma2_ic = sigma2_ic;
    for (std::size_t k = 0; k < grid.T(); ++k) {
      for (std::size_t i = 1; i + 1 < grid.n(); ++i) c.interior.push_back({grid.s(i), grid.t(k)});
      c.boundary.push_back({grid.s_min(), grid.t(k)});
      c.boundary.push_back({grid.s_max(), grid.t(k)});
    }
    for (std::size_t i = 0; i < grid.n(); ++i) c.ic.push_back({grid.s(i), grid.t(0)});
    return c;
  }

  void validate(double s_min, double s_max, double t_max) const {
    if (!(sigma2_r > 0.0) || !(sigma2_bc > 0.0) || !(sigma2_ic > 0.0)) {
      throw std::invalid_argument("CollocationSet: variances must be > 0");
    }
    for (const Coord& c : interior) {
      if (!(c.s > s_min && c.s < s_max) || c.t < 0.0 || c.t > t_max) {
        throw std::invalid_argument("CollocationSet: residual point outside the open spatial domain");
      }
    }
  }
};

struct ModelConfig {
  NeuralNetSpec net;
  PriorConfig prior;
  /// false gives the discrepancy-only model: no network, u_NN = 0, and no
  /// residual, wall or initial-condition terms.
  bool use_network = true;
  std::function<double(double)> ic_target = [](double s) { return std::exp(-s * s); };
  double bc_value = 0.0;
};

/// Observations z (mask = observed) and covariate fields on the same grid.
struct ObservationData {
  Field z;
  std::vector<Field> covariates;

  std::size_t n_covariates() const { return covariates.size(); }
};

/// Constrained model parameters.
struct ParameterVector {
  std::vector<double> theta_W;
  std::vector<double> beta;
  double lambda = 0.1;
  double sigma_d = 0.2;
  double sigma2_nu = 0.05;
  double ell_nu = 0.15;
};

/// Breakdown of the log joint density.
struct LogJointTerms {
  double data = 0.0;
  double residual = 0.0;
  double boundary = 0.0;
  double initial = 0.0;
  double prior = 0.0;
  double total() const { return data + residual + boundary + initial + prior; }
};

namespace detail {

inline double sigmoid(double y) {
  return y >= 0.0 ? 1.0 / (1.0 + std::exp(-y)) : std::exp(y) / (1.0 + std::exp(y));
}

struct Bounded {
  double lo, hi;
  double constrain(double y) const { return lo + (hi - lo) * sigmoid(y); }
  double unconstrain(double x) const {
    if (!(x > lo && x < hi)) {
      throw std::invalid_argument("parameter " + std::to_string(x) + " outside (" + std::to_string(lo) + ", " +
                                  std::to_string(hi) + ")");
    }
    const double p = (x - lo) / (hi - lo);
    return std::log(p) - std::log1p(-p);
  }
  // dx/dy and log|dx/dy| with its derivative in y.
  double dx_dy(double y) const {
    const double p = sigmoid(y);
    return (hi - lo) * p * (1.0 - p);
  }
  double log_jacobian(double y) const { return std::log(hi - lo) - std::log1p(std::exp(-y)) - std::log1p(std::exp(y)); }
  double dlog_jacobian(double y) const { return 1.0 - 2.0 * sigmoid(y); }
};

}  // namespace detail

/// Log joint density of the hierarchical model with a network latent
/// process: per-time marginal Gaussian data likelihood with the discrepancy
/// GP integrated out, PDE residual / wall / initial-condition
/// pseudo-observations, and priors.
///
/// Unconstrained layout: [theta_W | beta | log lambda | logit sigma_d |
/// logit sigma2_nu | logit ell_nu], the logits being scaled to the prior
/// truncation bounds.
class BpinnModel {
 public:
  BpinnModel(ModelConfig cfg, ObservationData data, CollocationSet colloc)
      : cfg_(std::move(cfg)), data_(std::move(data)), colloc_(std::move(colloc)) {
    if (!data_.z.grid) throw std::invalid_argument("BpinnModel: observations have no grid");
    data_.z.check_finite();
    const SpaceTimeGrid& grid = *data_.z.grid;
    for (const Field& x : data_.covariates) {
      if (!x.grid || !(*x.grid == grid)) throw std::invalid_argument("BpinnModel: covariate grid mismatch");
      if (!x.values.allFinite()) throw std::invalid_argument("BpinnModel: non-finite covariate");
    }
    if (cfg_.use_network) {
      cfg_.net.validate();
      colloc_.validate(grid.s_min(), grid.s_max(), grid.t_max());
    } else {
      colloc_.interior.clear();
      colloc_.boundary.clear();
      colloc_.ic.clear();
    }
    build_index();
  }

  const ModelConfig& config() const { return cfg_; }
  const ObservationData& data() const { return data_; }
  const CollocationSet& collocation() const { return colloc_; }
  const SpaceTimeGrid& grid() const { return *data_.z.grid; }

  std::size_t n_weights() const { return cfg_.use_network ? cfg_.net.n_params() : 0; }
  std::size_t n_beta() const { return data_.n_covariates(); }
  std::size_t dim() const { return n_weights() + n_beta() + 4; }

  std::size_t lambda_index() const { return n_weights() + n_beta(); }

  /// Names of the constrained scalar parameters, in unconstrained order
  /// after theta_W.
  std::vector<std::string> scalar_names() const {
    std::vector<std::string> names;
    for (std::size_t j = 0; j < n_beta(); ++j) names.push_back("beta" + std::to_string(j + 1));
    names.insert(names.end(), {"lambda", "sigma_d", "sigma2_nu", "ell_nu"});
    return names;
  }

  ParameterVector constrain(std::span<const double> y) const {
    check_dim(y);
    ParameterVector p;
    const std::size_t W = n_weights(), B = n_beta();
    p.theta_W.assign(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(W));
    p.beta.assign(y.begin() + static_cast<std::ptrdiff_t>(W), y.begin() + static_cast<std::ptrdiff_t>(W + B));
    p.lambda = std::exp(y[W + B]);
    p.sigma_d = bound_d().constrain(y[W + B + 1]);
    p.sigma2_nu = bound_nu().constrain(y[W + B + 2]);
    p.ell_nu = bound_ell().constrain(y[W + B + 3]);
    return p;
  }

  std::vector<double> unconstrain(const ParameterVector& p) const {
    check_params(p);
    std::vector<double> y(p.theta_W);
    y.insert(y.end(), p.beta.begin(), p.beta.end());
    if (!(p.lambda > 0.0)) throw std::invalid_argument("unconstrain: lambda must be > 0");
    y.push_back(std::log(p.lambda));
    y.push_back(bound_d().unconstrain(p.sigma_d));
    y.push_back(bound_nu().unconstrain(p.sigma2_nu));
    y.push_back(bound_ell().unconstrain(p.ell_nu));
    return y;
  }

  /// Log joint density in constrained coordinates (no Jacobian).
  LogJointTerms log_joint_terms(const ParameterVector& p) const {
    check_params(p);
    Gradient* none = nullptr;
    return evaluate(p, none);
  }

  double log_joint(const ParameterVector& p) const { return log_joint_terms(p).total(); }

  /// Log density in unconstrained coordinates, including log|Jacobian|.
  double log_density(std::span<const double> y) const {
    const ParameterVector p = constrain(y);
    Gradient* none = nullptr;
    return evaluate(p, none).total() + log_jacobian(y);
  }

  /// Log density and its gradient in unconstrained coordinates.
  double log_density_gradient(std::span<const double> y, std::span<double> grad) const {
    if (grad.size() != dim()) throw std::invalid_argument("log_density_gradient: gradient length mismatch");
    const ParameterVector p = constrain(y);
    Gradient g;
    g.theta_W.assign(n_weights(), 0.0);
    g.beta.assign(n_beta(), 0.0);
    Gradient* gp = &g;
    const double lp = evaluate(p, gp).total();
    const std::size_t W = n_weights(), B = n_beta();
    for (std::size_t j = 0; j < W; ++j) grad[j] = g.theta_W[j];
    for (std::size_t j = 0; j < B; ++j) grad[W + j] = g.beta[j];
    const double y_l = y[W + B], y_d = y[W + B + 1], y_nu = y[W + B + 2], y_ell = y[W + B + 3];
    grad[W + B] = g.lambda * p.lambda + 1.0;
    grad[W + B + 1] = g.sigma_d * bound_d().dx_dy(y_d) + bound_d().dlog_jacobian(y_d);
    grad[W + B + 2] = g.sigma2_nu * bound_nu().dx_dy(y_nu) + bound_nu().dlog_jacobian(y_nu);
    grad[W + B + 3] = g.ell_nu * bound_ell().dx_dy(y_ell) + bound_ell().dlog_jacobian(y_ell);
    return lp + y_l + bound_d().log_jacobian(y_d) + bound_nu().log_jacobian(y_nu) + bound_ell().log_jacobian(y_ell);
  }

  double log_jacobian(std::span<const double> y) const {
    const std::size_t o = n_weights() + n_beta();
    return y[o] + bound_d().log_jacobian(y[o + 1]) + bound_nu().log_jacobian(y[o + 2]) +
           bound_ell().log_jacobian(y[o + 3]);
  }

  /// PDE residual u_t + u u_s - lambda u_ss of the network at one point.
  double pde_residual(std::span<const double> theta_W, double lambda, double s, double t) const {
    const auto d = ad::input_derivs<double>(
        [this](const ad::DualSecond<double>& ss, const ad::DualSecond<double>& tt, std::span<const double> th) {
          return nn_forward_generic<double, ad::DualSecond<double>>(cfg_.net, th, ss, tt);
        },
        s, t, theta_W);
    return d.du_dt + d.u * d.du_ds - lambda * d.d2u_ds2;
  }

  /// Network values on the full grid (T x n); zeros for the discrepancy-only model.
  RowMatrix network_field(std::span<const double> theta_W) const {
    const SpaceTimeGrid& grid = this->grid();
    RowMatrix out = RowMatrix::Zero(static_cast<Eigen::Index>(grid.T()), static_cast<Eigen::Index>(grid.n()));
    if (!cfg_.use_network) return out;
    const std::vector<Coord> pts = grid_coords(grid);
    const NetworkBatch batch(cfg_.net, pts);
    NetworkBatch::Workspace ws;
    const auto& ch = batch.forward(theta_W, ws);
    for (std::size_t j = 0; j < pts.size(); ++j) {
      out(static_cast<Eigen::Index>(j / grid.n()), static_cast<Eigen::Index>(j % grid.n())) = ch.u(static_cast<Eigen::Index>(j));
    }
    return out;
  }

  /// Covariate mean x(s,t)' beta on the full grid.
  RowMatrix mean_field(std::span<const double> beta) const {
    RowMatrix mu = RowMatrix::Zero(static_cast<Eigen::Index>(grid().T()), static_cast<Eigen::Index>(grid().n()));
    for (std::size_t j = 0; j < n_beta(); ++j) mu += beta[j] * data_.covariates[j].values;
    return mu;
  }

 private:
  struct Gradient {
    std::vector<double> theta_W;
    std::vector<double> beta;
    double lambda = 0.0, sigma_d = 0.0, sigma2_nu = 0.0, ell_nu = 0.0;
  };

  // Times sharing one observed-column pattern share one covariance matrix.
  struct ObsGroup {
    std::vector<std::size_t> columns;
    std::vector<std::size_t> times;
  };

  void check_dim(std::span<const double> y) const {
    if (y.size() != dim()) {
      throw std::invalid_argument("BpinnModel: parameter vector has " + std::to_string(y.size()) +
                                  " entries, expected " + std::to_string(dim()));
    }
  }

  void check_params(const ParameterVector& p) const {
    if (p.theta_W.size() != n_weights()) throw std::invalid_argument("BpinnModel: theta_W length mismatch");
    if (p.beta.size() != n_beta()) throw std::invalid_argument("BpinnModel: beta length mismatch");
  }

  detail::Bounded bound_d() const { return {cfg_.prior.lower_d, cfg_.prior.upper_d}; }
  detail::Bounded bound_nu() const { return {cfg_.prior.lower_nu, cfg_.prior.upper_nu}; }
  detail::Bounded bound_ell() const { return {cfg_.prior.lower_ell, cfg_.prior.upper_ell}; }

  void build_index() {
    const SpaceTimeGrid& grid = this->grid();
    std::map<std::pair<double, double>, std::size_t> seen;
    auto add = [&](const Coord& c) {
      auto [it, inserted] = seen.try_emplace({c.s, c.t}, points_.size());
      if (inserted) points_.push_back(c);
      return it->second;
    };
    std::map<std::vector<std::size_t>, std::size_t> group_of;
    obs_point_.assign(grid.T(), {});
    for (std::size_t k = 0; k < grid.T(); ++k) {
      std::vector<std::size_t> cols;
      for (std::size_t i = 0; i < grid.n(); ++i) {
        if (data_.z.mask(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i))) cols.push_back(i);
      }
      if (cols.empty()) continue;
      if (cfg_.use_network) {
        for (std::size_t i : cols) obs_point_[k].push_back(add({grid.s(i), grid.t(k)}));
      }
      auto [it, inserted] = group_of.try_emplace(cols, groups_.size());
      if (inserted) groups_.push_back({cols, {}});
      groups_[it->second].times.push_back(k);
    }
    for (const Coord& c : colloc_.interior) interior_point_.push_back(add(c));
    for (const Coord& c : colloc_.boundary) boundary_point_.push_back(add(c));
    for (const Coord& c : colloc_.ic) {
      ic_point_.push_back(add(c));
      ic_value_.push_back(cfg_.ic_target(c.s));
    }
    if (cfg_.use_network && !points_.empty()) batch_ = std::make_shared<const NetworkBatch>(cfg_.net, points_);
  }

  // Accumulates the log density; fills `g` (constrained gradient) when non-null.
  LogJointTerms evaluate(const ParameterVector& p, Gradient*& g) const {
    const SpaceTimeGrid& grid = this->grid();
    const PriorConfig& pr = cfg_.prior;
    LogJointTerms terms;

    NetworkBatch::Workspace ws;
    NetworkBatch::Channels adj;
    const NetworkBatch::Channels* ch = nullptr;
    if (batch_) {
      ch = &batch_->forward(p.theta_W, ws);
      const auto P = static_cast<Eigen::Index>(points_.size());
      adj.u = Eigen::RowVectorXd::Zero(P);
      adj.u_t = Eigen::RowVectorXd::Zero(P);
      adj.u_s = Eigen::RowVectorXd::Zero(P);
      adj.u_ss = Eigen::RowVectorXd::Zero(P);
    }

    // Data: z_t(obs) ~ N(X_t beta + u_NN, sigma2_nu K_ell + sigma_d^2 I).
    const double log2pi = std::log(2.0 * kPi);
    for (const ObsGroup& group : groups_) {
      const auto m = static_cast<Eigen::Index>(group.columns.size());
      Matrix D2(m, m);
      for (Eigen::Index a = 0; a < m; ++a) {
        for (Eigen::Index b = 0; b < m; ++b) {
          const double d = grid.s(group.columns[static_cast<std::size_t>(a)]) - grid.s(group.columns[static_cast<std::size_t>(b)]);
          D2(a, b) = d * d;
        }
      }
      const Matrix K = (-D2.array() / (2.0 * p.ell_nu * p.ell_nu)).exp().matrix();
      Matrix Sigma = p.sigma2_nu * K;
      Sigma.diagonal().array() += p.sigma_d * p.sigma_d;
      Eigen::LLT<Matrix> llt(Sigma);
      if (llt.info() != Eigen::Success) {
        throw NumericalError("log_joint: marginal data covariance is not positive definite at time index " +
                             std::to_string(group.times.front()));
      }
      const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      Matrix outer = Matrix::Zero(m, m);
      for (std::size_t k : group.times) {
        Vector r(m);
        for (Eigen::Index a = 0; a < m; ++a) {
          const auto col = static_cast<Eigen::Index>(group.columns[static_cast<std::size_t>(a)]);
          double mean = 0.0;
          for (std::size_t j = 0; j < n_beta(); ++j) mean += p.beta[j] * data_.covariates[j].values(static_cast<Eigen::Index>(k), col);
          if (ch) mean += ch->u(static_cast<Eigen::Index>(obs_point_[k][static_cast<std::size_t>(a)]));
          r(a) = data_.z.values(static_cast<Eigen::Index>(k), col) - mean;
        }
        const Vector alpha = llt.solve(r);
        terms.data += -0.5 * (r.dot(alpha) + logdet + static_cast<double>(m) * log2pi);
        if (g) {
          outer.noalias() += alpha * alpha.transpose();
          for (Eigen::Index a = 0; a < m; ++a) {
            const auto col = static_cast<Eigen::Index>(group.columns[static_cast<std::size_t>(a)]);
            for (std::size_t j = 0; j < n_beta(); ++j) g->beta[j] += alpha(a) * data_.covariates[j].values(static_cast<Eigen::Index>(k), col);
            if (ch) adj.u(static_cast<Eigen::Index>(obs_point_[k][static_cast<std::size_t>(a)])) += alpha(a);
          }
        }
      }
      if (g) {
        // d/dSigma = (sum_t alpha alpha' - n_t Sigma^-1) / 2
        const Matrix Sinv = llt.solve(Matrix::Identity(m, m));
        const Matrix Wm = 0.5 * (outer - static_cast<double>(group.times.size()) * Sinv);
        g->sigma2_nu += (Wm.array() * K.array()).sum();
        const double l3 = p.ell_nu * p.ell_nu * p.ell_nu;
        g->ell_nu += p.sigma2_nu * (Wm.array() * K.array() * D2.array()).sum() / l3;
        g->sigma_d += 2.0 * p.sigma_d * Wm.trace();
      }
    }

    if (ch) {
      const double half_log_r = 0.5 * std::log(2.0 * kPi * colloc_.sigma2_r);
      for (std::size_t j = 0; j < interior_point_.size(); ++j) {
        const auto q = static_cast<Eigen::Index>(interior_point_[j]);
        const double u = ch->u(q), u_t = ch->u_t(q), u_s = ch->u_s(q), u_ss = ch->u_ss(q);
        const double r = u_t + u * u_s - p.lambda * u_ss;
        terms.residual += -0.5 * r * r / colloc_.sigma2_r - half_log_r;
        if (g) {
          const double R = -r / colloc_.sigma2_r;
          adj.u_t(q) += R;
          adj.u(q) += R * u_s;
          adj.u_s(q) += R * u;
          adj.u_ss(q) += -p.lambda * R;
          g->lambda += -R * u_ss;
        }
      }
      const double half_log_bc = 0.5 * std::log(2.0 * kPi * colloc_.sigma2_bc);
      for (std::size_t q0 : boundary_point_) {
        const auto q = static_cast<Eigen::Index>(q0);
        const double e = ch->u(q) - cfg_.bc_value;
        terms.boundary += -0.5 * e * e / colloc_.sigma2_bc - half_log_bc;
        if (g) adj.u(q) += -e / colloc_.sigma2_bc;
      }
      const double half_log_ic = 0.5 * std::log(2.0 * kPi * colloc_.sigma2_ic);
      for (std::size_t j = 0; j < ic_point_.size(); ++j) {
        const auto q = static_cast<Eigen::Index>(ic_point_[j]);
        const double e = ch->u(q) - ic_value_[j];
        terms.initial += -0.5 * e * e / colloc_.sigma2_ic - half_log_ic;
        if (g) adj.u(q) += -e / colloc_.sigma2_ic;
      }
    }

    // Priors.
    for (std::size_t j = 0; j < p.theta_W.size(); ++j) {
      const double w = p.theta_W[j] - pr.mu_W;
      terms.prior += -0.5 * w * w / pr.c_W;
      if (g) g->theta_W[j] += -w / pr.c_W;
    }
    for (std::size_t j = 0; j < p.beta.size(); ++j) {
      const double b = p.beta[j] - pr.mu_beta;
      terms.prior += -0.5 * b * b / pr.c_beta;
      if (g) g->beta[j] += -b / pr.c_beta;
    }
    {
      const double d = p.lambda - pr.mu_lambda;
      terms.prior += -0.5 * d * d / pr.sigma2_lambda;
      if (g) g->lambda += -d / pr.sigma2_lambda;
    }
    auto cauchy = [&](double x, double mu, double gamma, double& grad_slot) {
      const double z = (x - mu) / gamma;
      terms.prior += -std::log1p(z * z);
      if (g) grad_slot += -2.0 * z / (gamma * (1.0 + z * z));
    };
    double dummy = 0.0;
    cauchy(p.sigma_d, pr.mu_d, pr.gamma_d, g ? g->sigma_d : dummy);
    cauchy(p.sigma2_nu, pr.mu_nu, pr.gamma_nu, g ? g->sigma2_nu : dummy);
    {
      const double d = p.ell_nu - pr.mu_ell;
      terms.prior += -0.5 * d * d / pr.sigma2_ell;
      if (g) g->ell_nu += -d / pr.sigma2_ell;
    }

    if (g && batch_) batch_->backward(p.theta_W, ws, adj, g->theta_W);
    return terms;
  }

  ModelConfig cfg_;
  ObservationData data_;
  CollocationSet colloc_;
  std::vector<Coord> points_;
  std::vector<std::vector<std::size_t>> obs_point_;
  std::vector<ObsGroup> groups_;
  std::vector<std::size_t> interior_point_;
  std::vector<std::size_t> boundary_point_;
  std::vector<std::size_t> ic_point_;
  std::vector<double> ic_value_;
  std::shared_ptr<const NetworkBatch> batch_;
};

/// Per-draw reconstruction on the full grid.
struct Prediction {
  RowMatrix u_nn;
  RowMatrix mu;
  RowMatrix nu_mean;
  RowMatrix nu_var;
  std::vector<Matrix> nu_cov;
  RowMatrix u_total;
};

/// u_NN on the grid, the discrepancy posterior per time (GP conditioning of
/// the observed residual z - x'beta - u_NN with noise sigma_d^2), and
/// u_total = mu + u_NN + E[nu].
inline Prediction predict(const BpinnModel& model, const ParameterVector& p, bool keep_cov = false) {
  const SpaceTimeGrid& grid = model.grid();
  Prediction out;
  out.u_nn = model.network_field(p.theta_W);
  out.mu = model.mean_field(p.beta);
  const auto T = static_cast<Eigen::Index>(grid.T()), n = static_cast<Eigen::Index>(grid.n());
  out.nu_mean = RowMatrix::Zero(T, n);
  out.nu_var = RowMatrix::Zero(T, n);
  const KernelSpec kern{KernelFamily::squared_exponential_space, p.sigma2_nu, p.ell_nu};
  const std::vector<Coord> query = spatial_coords(grid.s_nodes());
  const Field& z = model.data().z;
  for (Eigen::Index k = 0; k < T; ++k) {
    std::vector<Coord> train;
    std::vector<double> resid;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!z.mask(k, i)) continue;
      train.push_back({grid.s(static_cast<std::size_t>(i)), 0.0});
      resid.push_back(z.values(k, i) - out.mu(k, i) - out.u_nn(k, i));
    }
    const Vector r = Eigen::Map<const Vector>(resid.data(), static_cast<Eigen::Index>(resid.size()));
    const GaussianPosterior post = gp_condition(kern, train, r, p.sigma_d * p.sigma_d, query);
    out.nu_mean.row(k) = post.mean.transpose();
    out.nu_var.row(k) = post.cov.diagonal().cwiseMax(0.0).transpose();
    if (keep_cov) out.nu_cov.push_back(post.cov);
  }
  out.u_total = out.mu + out.u_nn + out.nu_mean;
  return out;
}

}  // namespace gmid

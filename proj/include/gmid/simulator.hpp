#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

#include "gmid/burgers.hpp"
#include "gmid/gp.hpp"
#include "gmid/grid.hpp"
#include "gmid/rng.hpp"

namespace gmid {

struct SimulationConfig {
  std::size_t n = 51;
  std::size_t T = 25;
  double s_min = -kPi;
  double s_max = kPi;
  double t_max = 5.0;
  double covariate_variance = 0.1;
  double covariate_length_scale = 8.03 / 20.0;
  std::vector<double> beta{0.3, -0.2};
  double lambda = 0.1;
  std::size_t solver_modes = 256;
  double solver_dt = 1e-3;
  double sigma2_nu = 0.05;
  double ell_nu = 0.15;
  double noise_sd = 0.2;
  double missing_fraction = 0.5;

  void validate() const {
    if (beta.empty()) throw std::invalid_argument("SimulationConfig: need at least one covariate coefficient");
    if (!(noise_sd >= 0.0)) throw std::invalid_argument("SimulationConfig: noise_sd must be >= 0");
    if (!(lambda > 0.0)) throw std::invalid_argument("SimulationConfig: lambda must be > 0");
    KernelSpec{KernelFamily::exponential_spacetime, covariate_variance, covariate_length_scale}.validate();
    KernelSpec{KernelFamily::squared_exponential_space, sigma2_nu, ell_nu}.validate();
  }
};

struct SimulationTruth {
  std::shared_ptr<const SpaceTimeGrid> grid;
  Field u_true, u_tilde, mu, nu;
  std::vector<Field> covariates;
  Field observations;
  std::vector<double> beta_true;
  double lambda_true = 0.0;
  double sigma_d_true = 0.0;
  double sigma2_nu_true = 0.0;
  double ell_nu_true = 0.0;
  std::uint64_t seed = 0;
};

/// Data-generating pipeline: covariates from an exponential space-time GP,
/// mu = x' beta, u_tilde from the spectral Burgers solver, nu_t i.i.d. over
/// time from a squared-exponential spatial GP, Gaussian measurement noise and
/// a column-constant missingness mask. Each random component has its own
/// seed substream.
inline SimulationTruth simulate(const SimulationConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SimulationTruth out;
  out.seed = seed;
  out.grid = std::make_shared<const SpaceTimeGrid>(build_grid(cfg.n, cfg.T, cfg.s_min, cfg.s_max, cfg.t_max));
  const SpaceTimeGrid& grid = *out.grid;
  const auto T = static_cast<Eigen::Index>(grid.T()), n = static_cast<Eigen::Index>(grid.n());

  const std::vector<Coord> pts = grid_coords(grid);
  const KernelSpec cov_kernel{KernelFamily::exponential_spacetime, cfg.covariate_variance, cfg.covariate_length_scale};
  const Matrix Kx = cov_matrix(cov_kernel, pts);
  const JitteredCholesky chol_x = jittered_cholesky(Kx, cfg.covariate_variance, false);
  out.mu = Field(out.grid);
  for (std::size_t j = 0; j < cfg.beta.size(); ++j) {
    // Stream ids 1 and 2 belong to x1, x2; any further covariates go past the fixed ids.
    const std::uint64_t sid = j == 0 ? stream::covariate_x1 : j == 1 ? stream::covariate_x2 : 100 + j;
    Rng rng = make_rng(seed, sid);
    NormalSampler normal;
    Vector z(Kx.rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    const Vector x = chol_x.llt.matrixL() * z;
    Field f(out.grid, Eigen::Map<const RowMatrix>(x.data(), T, n));
    out.mu.values += cfg.beta[j] * f.values;
    out.covariates.push_back(std::move(f));
  }

  BurgersConfig bcfg;
  bcfg.lambda = cfg.lambda;
  bcfg.n_internal = cfg.solver_modes;
  bcfg.dt_internal = cfg.solver_dt;
  bcfg.s_min = cfg.s_min;
  bcfg.s_max = cfg.s_max;
  out.u_tilde = solve(bcfg, out.grid);

  const KernelSpec nu_kernel{KernelFamily::squared_exponential_space, cfg.sigma2_nu, cfg.ell_nu};
  const std::vector<Coord> s_pts = spatial_coords(grid.s_nodes());
  const JitteredCholesky chol_nu = jittered_cholesky(cov_matrix(nu_kernel, s_pts), cfg.sigma2_nu, false);
  out.nu = Field(out.grid);
  {
    Rng rng = make_rng(seed, stream::discrepancy);
    NormalSampler normal;
    Vector z(n);
    for (Eigen::Index k = 0; k < T; ++k) {
      for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
      out.nu.values.row(k) = (chol_nu.llt.matrixL() * z).transpose();
    }
  }

  out.u_true = Field(out.grid, out.mu.values + out.u_tilde.values + out.nu.values);

  out.observations = Field(out.grid);
  out.observations.mask = make_mask(grid, cfg.missing_fraction, seed);
  {
    Rng rng = make_rng(seed, stream::measurement_noise);
    NormalSampler normal;
    for (Eigen::Index k = 0; k < T; ++k) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double e = cfg.noise_sd * normal(rng);
        out.observations.values(k, i) = out.observations.mask(k, i) ? out.u_true.values(k, i) + e : 0.0;
      }
    }
  }

  out.beta_true = cfg.beta;
  out.lambda_true = cfg.lambda;
  out.sigma_d_true = cfg.noise_sd;
  out.sigma2_nu_true = cfg.sigma2_nu;
  out.ell_nu_true = cfg.ell_nu;
  return out;
}

}  // namespace gmid

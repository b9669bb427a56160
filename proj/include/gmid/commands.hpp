#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmid/assimilation.hpp"
#include "gmid/burgers.hpp"
#include "gmid/config.hpp"
#include "gmid/diagnostics.hpp"
#include "gmid/fit.hpp"
#include "gmid/io.hpp"
#include "gmid/model.hpp"
#include "gmid/pnm.hpp"
#include "gmid/simulator.hpp"

namespace gmid {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace detail {

inline std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

inline json read_json(const fs::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

// Long-format table over a grid: t, s, then one column per field.
inline std::string fields_to_csv(const SpaceTimeGrid& grid, const std::vector<std::string>& names,
                                 const std::vector<const RowMatrix*>& fields) {
  std::ostringstream out;
  out << "t,s";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t k = 0; k < grid.T(); ++k) {
    for (std::size_t i = 0; i < grid.n(); ++i) {
      out << format_double(grid.t(k)) << ',' << format_double(grid.s(i));
      for (const RowMatrix* f : fields) {
        out << ',' << format_double((*f)(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)));
      }
      out << '\n';
    }
  }
  return out.str();
}

inline std::string value_csv(const SpaceTimeGrid& grid, const RowMatrix& values) {
  return fields_to_csv(grid, {"value"}, {&values});
}

}  // namespace detail

/// Model configuration for a run on a given grid: the network input scaling
/// follows the grid extent.
inline ModelConfig model_config(const RunConfig& cfg, const SpaceTimeGrid& grid) {
  ModelConfig m = model_config(cfg);
  m.net.s_lo = grid.s_min();
  m.net.s_hi = grid.s_max();
  m.net.t_max = grid.t_max();
  return m;
}

inline CollocationSet collocation(const RunConfig& cfg, const SpaceTimeGrid& grid) {
  return CollocationSet::from_grid(grid, cfg.sigma2_r, cfg.sigma2_bc, cfg.sigma2_ic);
}

inline json truth_json(const SimulationTruth& truth) {
  json j;
  j["seed"] = truth.seed;
  for (std::size_t k = 0; k < truth.beta_true.size(); ++k) j["beta" + std::to_string(k + 1)] = truth.beta_true[k];
  j["lambda"] = truth.lambda_true;
  j["sigma_d"] = truth.sigma_d_true;
  j["sigma2_nu"] = truth.sigma2_nu_true;
  j["ell_nu"] = truth.ell_nu_true;
  const SpaceTimeGrid& g = *truth.grid;
  j["grid"] = {{"n", g.n()}, {"T", g.T()}, {"s_min", g.s_min()}, {"s_max", g.s_max()}, {"t_max", g.t_max()}};
  std::size_t observed = 0;
  for (Eigen::Index k = 0; k < truth.observations.mask.rows(); ++k) {
    for (Eigen::Index i = 0; i < truth.observations.mask.cols(); ++i) observed += truth.observations.mask(k, i) ? 1 : 0;
  }
  j["n_observed"] = observed;
  return j;
}

/// truth.csv, obs.csv and truth.json.
inline std::map<std::string, std::string> simulate_files(const SimulationTruth& truth) {
  const SpaceTimeGrid& g = *truth.grid;
  std::vector<std::string> names{"u_true", "u_tilde", "mu", "nu"};
  std::vector<const RowMatrix*> fields{&truth.u_true.values, &truth.u_tilde.values, &truth.mu.values, &truth.nu.values};
  for (std::size_t j = 0; j < truth.covariates.size(); ++j) {
    names.push_back("x" + std::to_string(j + 1));
    fields.push_back(&truth.covariates[j].values);
  }
  std::ostringstream obs;
  obs << "t,s,z,observed\n";
  for (std::size_t k = 0; k < g.T(); ++k) {
    for (std::size_t i = 0; i < g.n(); ++i) {
      const auto r = static_cast<Eigen::Index>(k), c = static_cast<Eigen::Index>(i);
      const bool seen = truth.observations.mask(r, c);
      obs << format_double(g.t(k)) << ',' << format_double(g.s(i)) << ',';
      if (seen) obs << format_double(truth.observations.values(r, c));
      obs << ',' << (seen ? 1 : 0) << '\n';
    }
  }
  return {{"truth.csv", detail::fields_to_csv(g, names, fields)},
          {"obs.csv", obs.str()},
          {"truth.json", detail::dump_json(truth_json(truth))}};
}

inline void cmd_simulate(const RunConfig& cfg, const fs::path& out) {
  write_files_atomically(out, simulate_files(simulate(cfg.sim, cfg.seed)));
}

/// Observations from obs.csv and covariates x1, x2, ... from a truth-style table.
inline ObservationData load_observations(const fs::path& obs_path, const fs::path& covariate_path) {
  const CsvTable obs = read_csv(obs_path);
  auto grid = grid_from_table(obs);
  ObservationData data{field_from_table(obs, "z", grid), {}};
  const CsvTable cov = read_csv(covariate_path);
  const auto cov_grid = grid_from_table(cov);
  if (!(*cov_grid == *grid)) {
    throw std::invalid_argument(covariate_path.string() + ": covariate grid differs from " + obs_path.string());
  }
  for (std::size_t j = 1; cov.has_column("x" + std::to_string(j)); ++j) {
    Field x = field_from_table(cov, "x" + std::to_string(j), grid);
    x.mask.setConstant(true);
    data.covariates.push_back(std::move(x));
  }
  if (data.covariates.empty()) throw std::invalid_argument(covariate_path.string() + ": no covariate columns x1, x2, ...");
  return data;
}

inline std::string draws_csv(const std::vector<std::string>& names, const std::vector<std::vector<double>>& cols) {
  std::ostringstream out;
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  out << '\n';
  const std::size_t n = cols.empty() ? 0 : cols[0].size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out << (j ? "," : "") << format_double(cols[j][i]);
    out << '\n';
  }
  return out.str();
}

inline json summary_json(const ParameterSummary& s) {
  json j;
  j["name"] = s.name;
  j["mean"] = s.mean;
  j["sd"] = s.sd;
  j["q025"] = s.q025;
  j["q500"] = s.q500;
  j["q975"] = s.q975;
  j["ess"] = s.ess_flagged ? json(nullptr) : json(s.ess);
  j["ess_flagged"] = s.ess_flagged;
  if (s.split_rhat) j["split_rhat"] = std::isfinite(*s.split_rhat) ? json(*s.split_rhat) : json(nullptr);
  return j;
}

struct FitOutput {
  FitResult result;
  std::map<std::string, std::string> files;
};

inline FitOutput fit_files(const RunConfig& cfg, const ObservationData& data, bool with_weights) {
  const ModelConfig mc = model_config(cfg, *data.z.grid);
  const BpinnModel model(mc, data, collocation(cfg, *data.z.grid));
  NutsConfig nuts = cfg.nuts;
  nuts.seed = cfg.seed;
  FitOutput out;
  out.result = fit_model(model, nuts, cfg.fit);
  const PosteriorSamples& s = out.result.samples;
  const auto cols = constrained_columns(model, s, with_weights);
  const auto names = constrained_names(model, with_weights);
  out.files["draws.csv"] = draws_csv(names, cols);

  json d;
  d["n_chains"] = s.n_chains;
  d["n_warmup"] = nuts.n_warmup;
  d["n_samples"] = nuts.n_samples;
  d["max_tree_depth"] = nuts.max_tree_depth;
  d["target_accept"] = nuts.target_accept;
  d["divergences"] = s.divergences();
  d["accept_rate"] = s.accept_rate();
  d["n_parameters"] = model.dim();
  d["init"] = {{"optimize_iterations", out.result.init_optimize_iterations},
               {"log_density", out.result.init_log_density}};
  json chains = json::array();
  for (const auto& c : s.chains) {
    chains.push_back({{"step_size", c.step_size},
                      {"accept_rate", c.accept_rate},
                      {"divergences", c.divergences},
                      {"warmup_divergences", c.warmup_divergences},
                      {"n_leapfrog", c.n_leapfrog},
                      {"max_depth_hits", c.max_depth_hits}});
  }
  d["chains"] = chains;
  json params = json::array();
  if (s.size() > 0) {
    const auto scalar_names = model.scalar_names();
    const auto report = diagnostics(s, scalar_names,
                                    std::vector<std::vector<double>>(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(scalar_names.size())));
    for (const auto& p : report.parameters) params.push_back(summary_json(p));
  }
  d["parameters"] = params;
  out.files["diagnostics.json"] = detail::dump_json(d);
  return out;
}

inline void cmd_fit(const RunConfig& cfg, const fs::path& obs_path, const fs::path& covariate_path, const fs::path& out,
                    bool with_weights) {
  const ObservationData data = load_observations(obs_path, covariate_path);
  write_files_atomically(out, fit_files(cfg, data, with_weights).files);
}

struct DrawTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> rows;
};

inline DrawTable read_draws(const fs::path& path) {
  const CsvTable t = read_csv(path);
  DrawTable d;
  d.names = t.header;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    std::vector<double> row(t.header.size());
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      try {
        row[c] = t.number(r, c);
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
      }
    }
    d.rows.push_back(std::move(row));
  }
  return d;
}

inline bool is_weight_column(const std::string& name) {
  return name.size() > 1 && name[0] == 'w' && std::all_of(name.begin() + 1, name.end(), [](char c) { return c >= '0' && c <= '9'; });
}

inline std::map<std::string, std::string> summarize_files(const DrawTable& draws, const std::optional<json>& truth) {
  if (draws.rows.empty()) throw std::invalid_argument("summarize: draws file has no rows");
  json out;
  out["n_draws"] = draws.rows.size();
  json params = json::array();
  std::ostringstream cov;
  cov << "parameter,truth,lower,upper,covered\n";
  for (std::size_t c = 0; c < draws.names.size(); ++c) {
    if (is_weight_column(draws.names[c])) continue;
    std::vector<double> col;
    for (const auto& r : draws.rows) col.push_back(r[c]);
    const ParameterSummary s = summarize_column(draws.names[c], col);
    json j = summary_json(s);
    if (truth && truth->contains(draws.names[c])) {
      const double v = (*truth)[draws.names[c]].get<double>();
      const bool covered = s.q025 <= v && v <= s.q975;
      j["truth"] = v;
      j["covered"] = covered;
      cov << draws.names[c] << ',' << format_double(v) << ',' << format_double(s.q025) << ',' << format_double(s.q975)
          << ',' << (covered ? "true" : "false") << '\n';
    }
    params.push_back(j);
  }
  out["parameters"] = params;
  std::map<std::string, std::string> files{{"summary.json", detail::dump_json(out)}};
  if (truth) files["coverage.csv"] = cov.str();
  return files;
}

inline void cmd_summarize(const fs::path& draws_path, const std::optional<fs::path>& truth_path, const fs::path& out) {
  const DrawTable draws = read_draws(draws_path);
  std::optional<json> truth;
  if (truth_path) truth = detail::read_json(*truth_path);
  write_files_atomically(out, summarize_files(draws, truth));
}

/// Constrained parameters from one draws.csv row.
inline ParameterVector parameters_from_row(const BpinnModel& model, const DrawTable& d, std::size_t r) {
  std::map<std::string, double> byname;
  for (std::size_t c = 0; c < d.names.size(); ++c) byname[d.names[c]] = d.rows[r][c];
  auto get = [&](const std::string& n) {
    auto it = byname.find(n);
    if (it == byname.end()) throw std::invalid_argument("draws: missing column " + n);
    return it->second;
  };
  ParameterVector p;
  for (std::size_t j = 0; j < model.n_beta(); ++j) p.beta.push_back(get("beta" + std::to_string(j + 1)));
  p.lambda = get("lambda");
  p.sigma_d = get("sigma_d");
  p.sigma2_nu = get("sigma2_nu");
  p.ell_nu = get("ell_nu");
  for (std::size_t j = 0; j < model.n_weights(); ++j) {
    auto it = byname.find("w" + std::to_string(j));
    if (it == byname.end()) {
      throw std::invalid_argument("draws: network weight columns are missing or do not match the configured network (" +
                                  std::to_string(model.n_weights()) + " weights expected); refit without --omit-weights");
    }
    p.theta_W.push_back(it->second);
  }
  return p;
}

struct PredictSummary {
  RowMatrix u_nn_mean, nu_mean, u_total_mean, u_total_std;
  std::size_t n_used = 0;
};

/// Posterior means over every `thin`-th draw; the u_total std adds the mean
/// per-draw discrepancy variance to the spread of per-draw u_total.
inline PredictSummary predict_summary(const BpinnModel& model, const DrawTable& draws, std::size_t thin) {
  if (draws.rows.empty()) throw std::invalid_argument("predict: no draws");
  if (thin == 0) throw std::invalid_argument("predict: thin must be >= 1");
  const auto T = static_cast<Eigen::Index>(model.grid().T()), n = static_cast<Eigen::Index>(model.grid().n());
  PredictSummary s;
  s.u_nn_mean = RowMatrix::Zero(T, n);
  s.nu_mean = RowMatrix::Zero(T, n);
  s.u_total_mean = RowMatrix::Zero(T, n);
  RowMatrix sq = RowMatrix::Zero(T, n), nu_var = RowMatrix::Zero(T, n);
  for (std::size_t r = 0; r < draws.rows.size(); r += thin) {
    const Prediction p = predict(model, parameters_from_row(model, draws, r));
    s.u_nn_mean += p.u_nn;
    s.nu_mean += p.nu_mean;
    s.u_total_mean += p.u_total;
    sq += p.u_total.cwiseProduct(p.u_total);
    nu_var += p.nu_var;
    ++s.n_used;
  }
  const double k = static_cast<double>(s.n_used);
  s.u_nn_mean /= k;
  s.nu_mean /= k;
  s.u_total_mean /= k;
  const RowMatrix spread = (sq / k - s.u_total_mean.cwiseProduct(s.u_total_mean)).cwiseMax(0.0);
  s.u_total_std = (nu_var / k + spread).cwiseSqrt();
  return s;
}

inline void cmd_predict(const RunConfig& cfg, const fs::path& draws_path, const fs::path& obs_path,
                        const fs::path& covariate_path, const fs::path& out) {
  const ObservationData data = load_observations(obs_path, covariate_path);
  const SpaceTimeGrid& grid = *data.z.grid;
  const BpinnModel model(model_config(cfg, grid), data, collocation(cfg, grid));
  const PredictSummary s = predict_summary(model, read_draws(draws_path), cfg.predict_thin);
  write_files_atomically(out, {{"u_nn_mean.csv", detail::value_csv(grid, s.u_nn_mean)},
                               {"nu_mean.csv", detail::value_csv(grid, s.nu_mean)},
                               {"u_total_mean.csv", detail::value_csv(grid, s.u_total_mean)},
                               {"u_total_std.csv", detail::value_csv(grid, s.u_total_std)}});
}

/// Twin experiment on the Burgers testbed: the spectral solution is the
/// truth, observed with noise at the simulation's missingness pattern, and
/// the coarse finite-difference map is the assimilating model.
struct BaselineRun {
  std::shared_ptr<const SpaceTimeGrid> grid;
  RowMatrix truth, analysis;
  Mask mask;
  json report;
};

inline BaselineRun run_baseline(const RunConfig& cfg, const std::string& mode) {
  static const std::vector<std::string> modes{"oi", "kalman", "4dvar-strong", "4dvar-weak"};
  if (std::find(modes.begin(), modes.end(), mode) == modes.end()) {
    throw std::invalid_argument("baseline: unknown mode '" + mode + "' (expected oi, kalman, 4dvar-strong, 4dvar-weak)");
  }
  const BaselineConfig& bc = cfg.baseline;
  BaselineRun run;
  run.grid = std::make_shared<const SpaceTimeGrid>(build_grid(cfg.sim.n, cfg.sim.T, cfg.sim.s_min, cfg.sim.s_max, cfg.sim.t_max));
  const SpaceTimeGrid& g = *run.grid;
  const auto T = static_cast<Eigen::Index>(g.T()), n = static_cast<Eigen::Index>(g.n());
  BurgersConfig bcfg;
  bcfg.lambda = cfg.sim.lambda;
  bcfg.n_internal = cfg.sim.solver_modes;
  bcfg.dt_internal = cfg.sim.solver_dt;
  bcfg.s_min = cfg.sim.s_min;
  bcfg.s_max = cfg.sim.s_max;
  run.truth = solve(bcfg, run.grid).values;
  run.mask = make_mask(g, cfg.sim.missing_fraction, cfg.seed);
  const ObservationOperator H = ObservationOperator::from_mask(run.mask);
  RowMatrix z = RowMatrix::Zero(T, n);
  {
    Rng rng = make_rng(cfg.seed, stream::measurement_noise);
    NormalSampler normal;
    for (Eigen::Index k = 0; k < T; ++k) {
      for (Eigen::Index i = 0; i < n; ++i) z(k, i) = run.truth(k, i) + bc.obs_noise_sd * normal(rng);
    }
  }
  const double r_var = bc.obs_noise_sd * bc.obs_noise_sd;
  if (!(r_var > 0.0)) throw std::invalid_argument("baseline: obs_noise_sd must be > 0");
  const Matrix C_b = background_covariance(g.s_nodes(), bc.background_variance, bc.background_length_scale, bc.background_nugget);
  const Vector u_b = Vector::Zero(n);
  const double dt_obs = g.t(1) - g.t(0);
  const auto substeps = static_cast<std::size_t>(std::ceil(dt_obs / bc.max_dt - 1e-12));
  const BurgersModel model{CoarseBurgers(g.n(), g.s(1) - g.s(0), cfg.sim.lambda, dt_obs / static_cast<double>(substeps)),
                           substeps};
  run.analysis = RowMatrix::Zero(T, n);
  run.report["mode"] = mode;

  auto obs_at = [&](Eigen::Index k) {
    const Vector row = z.row(k).transpose();
    return H.apply(row, static_cast<std::size_t>(k));
  };

  if (mode == "oi") {
    for (Eigen::Index k = 0; k < T; ++k) {
      const Vector zk = obs_at(k);
      const Matrix R = r_var * Matrix::Identity(zk.size(), zk.size());
      run.analysis.row(k) = optimal_interpolation(u_b, C_b, H.matrix(static_cast<std::size_t>(k)), R, zk).transpose();
    }
  } else if (mode == "kalman") {
    std::vector<KalmanObservation> obs;
    for (Eigen::Index k = 0; k < T; ++k) {
      const Vector zk = obs_at(k);
      obs.push_back({zk, H.matrix(static_cast<std::size_t>(k)), r_var * Matrix::Identity(zk.size(), zk.size())});
    }
    const Matrix Q = background_covariance(g.s_nodes(), bc.model_error_variance, bc.model_error_length_scale, bc.background_nugget);
    const KalmanResult kf = extended_kalman_filter(obs, model, Q, u_b, C_b);
    for (Eigen::Index k = 0; k < T; ++k) run.analysis.row(k) = kf.filtered_mean[static_cast<std::size_t>(k)].transpose();
  } else {
    std::vector<WindowObservation> obs;
    for (Eigen::Index k = 0; k < T; ++k) {
      const Vector zk = obs_at(k);
      obs.push_back({H.indices(static_cast<std::size_t>(k)), zk, Vector::Constant(zk.size(), r_var)});
    }
    AssimConfig ac;
    ac.u_b = u_b;
    ac.C_b = C_b;
    ac.Q = background_covariance(g.s_nodes(), bc.model_error_variance, bc.model_error_length_scale, bc.background_nugget);
    ac.optimizer.max_iterations = bc.max_iterations;
    ac.optimizer.grad_tolerance = bc.grad_tolerance;
    const Var4dResult r = var4d(u_b, obs, ac, model, mode == "4dvar-weak" ? Var4dMode::weak : Var4dMode::strong);
    for (Eigen::Index k = 0; k < T; ++k) run.analysis.row(k) = r.trajectory[static_cast<std::size_t>(k)].transpose();
    run.report["objective"] = r.objective;
    run.report["grad_norm"] = r.grad_norm;
    run.report["iterations"] = r.iterations;
    run.report["converged"] = r.converged;
  }

  double se_all = 0.0, se_missing = 0.0;
  std::size_t n_missing = 0;
  for (Eigen::Index k = 0; k < T; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e = run.analysis(k, i) - run.truth(k, i);
      se_all += e * e;
      if (!run.mask(k, i)) {
        se_missing += e * e;
        ++n_missing;
      }
    }
  }
  run.report["rmse"] = std::sqrt(se_all / static_cast<double>(T * n));
  run.report["rmse_unobserved"] = n_missing ? json(std::sqrt(se_missing / static_cast<double>(n_missing))) : json(nullptr);
  run.report["model_substeps"] = substeps;
  return run;
}

inline void cmd_baseline(const RunConfig& cfg, const std::string& mode, const fs::path& out) {
  const BaselineRun run = run_baseline(cfg, mode);
  Field analysis(run.grid, run.analysis);
  Field truth(run.grid, run.truth);
  write_files_atomically(out, {{"analysis.csv", field_to_csv(analysis)},
                               {"twin_truth.csv", field_to_csv(truth)},
                               {"baseline.json", detail::dump_json(run.report)}});
}

/// -u'' = 2 on [0, 1] with u(0) = u(1) = 0; exact solution s (1 - s).
inline PnmPosterior pnm_poisson_demo(const PnmDemoConfig& pc, std::span<const double> query) {
  PnmProblem prob;
  prob.op = LinearOperatorSpec::combination(0.0, 0.0, -1.0);
  prob.kernel = KernelSpec{KernelFamily::squared_exponential_space, pc.variance, pc.length_scale};
  for (std::size_t i = 0; i < pc.n_collocation; ++i) {
    prob.collocation.push_back(static_cast<double>(i + 1) / static_cast<double>(pc.n_collocation + 1));
    prob.forcing.push_back(2.0);
  }
  prob.forcing_noise = pc.forcing_noise;
  prob.boundary = {0.0, 1.0};
  prob.boundary_values = {0.0, 0.0};
  return pnm_solve(prob, query);
}

inline void cmd_pnm_demo(const RunConfig& cfg, const fs::path& out) {
  const PnmDemoConfig& pc = cfg.pnm;
  if (pc.n_query < 2) throw std::invalid_argument("pnm: n_query must be >= 2");
  std::vector<double> query;
  for (std::size_t i = 0; i < pc.n_query; ++i) query.push_back(static_cast<double>(i) / static_cast<double>(pc.n_query - 1));
  const PnmPosterior post = pnm_poisson_demo(pc, query);
  std::ostringstream csv;
  csv << "s,mean,sd,exact\n";
  double max_err = 0.0;
  for (std::size_t i = 0; i < query.size(); ++i) {
    const auto q = static_cast<Eigen::Index>(i);
    const double exact = query[i] * (1.0 - query[i]);
    const double sd = std::sqrt(std::max(0.0, post.u.cov(q, q)));
    max_err = std::max(max_err, std::abs(post.u.mean(q) - exact));
    csv << format_double(query[i]) << ',' << format_double(post.u.mean(q)) << ',' << format_double(sd) << ','
        << format_double(exact) << '\n';
  }
  json j;
  j["n_collocation"] = pc.n_collocation;
  j["forcing_noise"] = pc.forcing_noise;
  j["max_abs_error"] = max_err;
  write_files_atomically(out, {{"pnm.csv", csv.str()}, {"pnm.json", detail::dump_json(j)}});
}

}  // namespace gmid

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "gmid/model.hpp"
#include "gmid/nuts.hpp"
#include "gmid/simulator.hpp"

namespace gmid {

struct FitOptions {
  /// Scale applied to the prior draw of the initial network weights.
  double init_scale = 0.1;
  /// L-BFGS iterations toward the posterior mode before sampling; 0 disables.
  std::size_t init_optimize_iters = 2000;
  bool use_network = true;
};

struct BaselineConfig {
  double background_variance = 0.5;
  double background_length_scale = 0.5;
  double background_nugget = 1e-4;
  double obs_noise_sd = 0.05;
  double model_error_variance = 1e-4;
  double model_error_length_scale = 0.5;
  double max_dt = 0.05;
  std::size_t max_iterations = 2000;
  double grad_tolerance = 1e-6;
};

struct PnmDemoConfig {
  std::size_t n_collocation = 20;
  std::size_t n_query = 101;
  double variance = 1.0;
  double length_scale = 0.2;
  double forcing_noise = 1e-8;
};

/// Everything a run needs; every default reproduces the reference experiment.
struct RunConfig {
  std::string name = "gmid";
  std::uint64_t seed = 1;
  std::string out = ".";
  SimulationConfig sim;
  NeuralNetSpec net;
  PriorConfig prior;
  double sigma2_r = 0.05 * 0.05;
  double sigma2_bc = 0.01 * 0.01;
  double sigma2_ic = 0.01 * 0.01;
  NutsConfig nuts;
  FitOptions fit;
  std::size_t predict_thin = 5;
  BaselineConfig baseline;
  PnmDemoConfig pnm;
};

namespace detail {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seed is stored through a size_t slot");
using ConfigSlot = std::variant<double*, std::size_t*, bool*, std::string*>;

inline std::map<std::string, ConfigSlot> config_slots(RunConfig& c) {
  return {
      {"experiment.name", &c.name},
      {"experiment.seed", &c.seed},
      {"experiment.out", &c.out},
      {"grid.n", &c.sim.n},
      {"grid.T", &c.sim.T},
      {"grid.s_min", &c.sim.s_min},
      {"grid.s_max", &c.sim.s_max},
      {"grid.t_max", &c.sim.t_max},
      {"simulation.covariate_variance", &c.sim.covariate_variance},
      {"simulation.covariate_length_scale", &c.sim.covariate_length_scale},
      {"simulation.beta1", &c.sim.beta[0]},
      {"simulation.beta2", &c.sim.beta[1]},
      {"simulation.lambda", &c.sim.lambda},
      {"simulation.solver_modes", &c.sim.solver_modes},
      {"simulation.solver_dt", &c.sim.solver_dt},
      {"simulation.sigma2_nu", &c.sim.sigma2_nu},
      {"simulation.ell_nu", &c.sim.ell_nu},
      {"simulation.noise_sd", &c.sim.noise_sd},
      {"simulation.missing_fraction", &c.sim.missing_fraction},
      {"model.hidden_layers", &c.net.hidden_layers},
      {"model.hidden_width", &c.net.hidden_width},
      {"model.sigma2_r", &c.sigma2_r},
      {"model.sigma2_bc", &c.sigma2_bc},
      {"model.sigma2_ic", &c.sigma2_ic},
      {"model.use_network", &c.fit.use_network},
      {"prior.mu_W", &c.prior.mu_W},
      {"prior.c_W", &c.prior.c_W},
      {"prior.mu_beta", &c.prior.mu_beta},
      {"prior.c_beta", &c.prior.c_beta},
      {"prior.mu_lambda", &c.prior.mu_lambda},
      {"prior.sigma2_lambda", &c.prior.sigma2_lambda},
      {"prior.mu_d", &c.prior.mu_d},
      {"prior.gamma_d", &c.prior.gamma_d},
      {"prior.lower_d", &c.prior.lower_d},
      {"prior.upper_d", &c.prior.upper_d},
      {"prior.mu_nu", &c.prior.mu_nu},
      {"prior.gamma_nu", &c.prior.gamma_nu},
      {"prior.lower_nu", &c.prior.lower_nu},
      {"prior.upper_nu", &c.prior.upper_nu},
      {"prior.mu_ell", &c.prior.mu_ell},
      {"prior.sigma2_ell", &c.prior.sigma2_ell},
      {"prior.lower_ell", &c.prior.lower_ell},
      {"prior.upper_ell", &c.prior.upper_ell},
      {"sampler.n_warmup", &c.nuts.n_warmup},
      {"sampler.n_samples", &c.nuts.n_samples},
      {"sampler.max_tree_depth", &c.nuts.max_tree_depth},
      {"sampler.target_accept", &c.nuts.target_accept},
      {"sampler.n_chains", &c.nuts.n_chains},
      {"sampler.init_scale", &c.fit.init_scale},
      {"sampler.init_optimize_iters", &c.fit.init_optimize_iters},
      {"predict.thin", &c.predict_thin},
      {"baseline.background_variance", &c.baseline.background_variance},
      {"baseline.background_length_scale", &c.baseline.background_length_scale},
      {"baseline.background_nugget", &c.baseline.background_nugget},
      {"baseline.obs_noise_sd", &c.baseline.obs_noise_sd},
      {"baseline.model_error_variance", &c.baseline.model_error_variance},
      {"baseline.model_error_length_scale", &c.baseline.model_error_length_scale},
      {"baseline.max_dt", &c.baseline.max_dt},
      {"baseline.max_iterations", &c.baseline.max_iterations},
      {"baseline.grad_tolerance", &c.baseline.grad_tolerance},
      {"pnm.n_collocation", &c.pnm.n_collocation},
      {"pnm.n_query", &c.pnm.n_query},
      {"pnm.variance", &c.pnm.variance},
      {"pnm.length_scale", &c.pnm.length_scale},
      {"pnm.forcing_noise", &c.pnm.forcing_noise},
  };
}

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof()) throw std::invalid_argument("config: bad value '" + text + "' for " + key);
  return v;
}

inline void assign(const ConfigSlot& slot, const std::string& key, const std::string& text) {
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, std::string>) {
          *p = text;
        } else if constexpr (std::is_same_v<T, bool>) {
          if (text == "true" || text == "1") *p = true;
          else if (text == "false" || text == "0") *p = false;
          else throw std::invalid_argument("config: bad boolean '" + text + "' for " + key);
        } else if constexpr (std::is_integral_v<T>) {
          if (!text.empty() && text[0] == '-') throw std::invalid_argument("config: " + key + " must be non-negative");
          *p = parse_value<T>(key, text);
        } else {
          *p = parse_value<T>(key, text);
        }
      },
      slot);
}

}  // namespace detail

/// Parses INI text (`[section]` headers, `key = value` lines, `;`/`#`
/// comments) over the defaults. Unknown keys are errors.
inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  auto slots = detail::config_slots(cfg);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw std::invalid_argument("config: key '" + section + "' outside any section");
    }
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      auto it = slots.find(full);
      if (it == slots.end()) throw std::invalid_argument("config: unknown key " + full);
      detail::assign(it->second, full, value.data());
    }
  }
  cfg.nuts.seed = cfg.seed;
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Model configuration implied by a run configuration.
inline ModelConfig model_config(const RunConfig& cfg) {
  ModelConfig m;
  m.net = cfg.net;
  m.net.s_lo = cfg.sim.s_min;
  m.net.s_hi = cfg.sim.s_max;
  m.net.t_max = cfg.sim.t_max;
  m.prior = cfg.prior;
  m.use_network = cfg.fit.use_network;
  return m;
}

}  // namespace gmid

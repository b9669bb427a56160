#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "gmid/commands.hpp"

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

gmid::RunConfig load(const Globals& g) {
  gmid::RunConfig cfg = g.config.empty() ? gmid::RunConfig{} : gmid::load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (g.out) cfg.out = *g.out;
  cfg.nuts.seed = cfg.seed;
  return cfg;
}

// Covariates default to the truth.csv written next to the observations.
std::string covariates_for(const std::string& obs, const std::string& given) {
  if (!given.empty()) return given;
  return (gmid::fs::path(obs).parent_path() / "truth.csv").string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gmid: simulation, B-PINN inference and assimilation baselines for the Burgers testbed"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "INI configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override experiment.seed");
  app.add_option("--out", g.out, "Output directory");

  auto* sim = app.add_subcommand("simulate", "Write truth.csv, obs.csv and truth.json");

  std::string obs, covariates, draws, truth, mode;
  bool omit_weights = false;
  auto* fit = app.add_subcommand("fit", "Sample the posterior; write draws.csv and diagnostics.json");
  fit->add_option("--obs", obs, "Observation table (t,s,z,observed)")->required();
  fit->add_option("--covariates", covariates, "Table with covariate columns x1, x2, ... (default: truth.csv beside --obs)");
  fit->add_flag("--omit-weights", omit_weights, "Leave the network weights out of draws.csv");

  auto* sum = app.add_subcommand("summarize", "Write summary.json and, with --truth, coverage.csv");
  sum->add_option("--draws", draws, "draws.csv from fit")->required();
  sum->add_option("--truth", truth, "truth.json from simulate");

  auto* pred = app.add_subcommand("predict", "Posterior mean and std fields over the grid");
  pred->add_option("--draws", draws, "draws.csv from fit (with weights)")->required();
  pred->add_option("--obs", obs, "Observation table used for the fit")->required();
  pred->add_option("--covariates", covariates, "Covariate table (default: truth.csv beside --obs)");

  auto* base = app.add_subcommand("baseline", "Data assimilation baseline on the Burgers twin experiment");
  base->add_option("--mode", mode, "Assimilation method")
      ->required()
      ->check(CLI::IsMember({"oi", "kalman", "4dvar-strong", "4dvar-weak"}));

  auto* pnm = app.add_subcommand("pnm-demo", "Probabilistic solve of -u'' = 2 on [0, 1]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    const gmid::RunConfig cfg = load(g);
    const gmid::fs::path out = cfg.out;
    if (sim->parsed()) {
      gmid::cmd_simulate(cfg, out);
    } else if (fit->parsed()) {
      gmid::cmd_fit(cfg, obs, covariates_for(obs, covariates), out, !omit_weights);
    } else if (sum->parsed()) {
      std::optional<gmid::fs::path> t;
      if (!truth.empty()) t = truth;
      gmid::cmd_summarize(draws, t, out);
    } else if (pred->parsed()) {
      gmid::cmd_predict(cfg, draws, obs, covariates_for(obs, covariates), out);
    } else if (base->parsed()) {
      gmid::cmd_baseline(cfg, mode, out);
    } else if (pnm->parsed()) {
      gmid::cmd_pnm_demo(cfg, out);
    }
  } catch (const gmid::NumericalError& e) {
    std::cerr << "error: numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "lmo_mvr/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"LMO optimizers with momentum variance reduction: runs, sweeps, rate fits and checks"};
  app.require_subcommand(1);

  lmo_mvr::CliRequest req;
  std::string config;
  std::string out = "lmo_mvr_out";
  std::size_t seeds = 0;
  const std::map<std::string, std::string> about{
      {"run", "one method, many seeds: per-seed traces and a summary"},
      {"sweep", "grid over harness.sweep_* values"},
      {"rate", "log-log fit of min-metric against the budgets"},
      {"verify-lemmas", "check the summation inequalities on their grids"},
      {"check-lmo", "sharpness and feasibility of the LMO on random matrices"},
      {"estimate-constants", "sigma, delta, L0, L1 and rho for the configured problem"},
  };
  for (const auto& name : lmo_mvr::subcommands()) {
    const auto it = about.find(name);
    auto* sub = app.add_subcommand(name, it == about.end() ? "" : it->second);
    sub->add_option("--config", config, "INI config file");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seeds", seeds, "number of seeds (overrides harness.seeds)");
    sub->add_option("--set", req.overrides, "override, e.g. method.beta=0.5")->take_all();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : lmo_mvr::kExitUsage;
  }

  const auto* sub = app.get_subcommands().front();
  req.subcommand = sub->get_name();
  if (!config.empty()) req.config_path = config;
  req.out_dir = out;
  if (sub->count("--seeds") > 0) req.seeds = seeds;
  return lmo_mvr::dispatch(req, std::cout, std::cerr);
}

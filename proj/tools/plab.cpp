// Experiment runner: stages of the poisoning pipeline behind subcommands.
#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "plab/experiment.hpp"

namespace {

plab::RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  plab::RunConfig cfg = plab::RunConfig::from_file(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--seed-override expects K=V");
    cfg.apply_seed_override(kv.substr(0, eq), std::stoull(kv.substr(eq + 1)));
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"clean-label poisoning laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir, axis;
  std::vector<std::string> seed_overrides, sweep_values;

  auto add_common = [&](CLI::App* cmd, bool needs_config = true) {
    if (needs_config) cmd->add_option("--config", config_path, "run config JSON")->required();
    cmd->add_option("--out", out_dir, "output directory")->required();
    cmd->add_option("--seed-override", seed_overrides, "override a seed, K=V with K in data|model|trigger|train");
  };

  struct StagedCmd {
    const char* name;
    const char* help;
    plab::Stage upto;
  };
  const StagedCmd staged[] = {
      {"gen-trigger", "train the generators and produce the trigger sets", plab::Stage::kTriggers},
      {"poison", "build the poisoned training set", plab::Stage::kPoison},
      {"train", "train the victim networks", plab::Stage::kVictim},
      {"eval", "evaluate accuracy, attack success, and condition metrics", plab::Stage::kMetrics},
      {"bounds", "evaluate the generalization-bound formulas", plab::Stage::kBounds},
      {"run", "full pipeline plus report", plab::Stage::kReport},
  };
  for (const auto& sc : staged) {
    auto* cmd = app.add_subcommand(sc.name, sc.help);
    add_common(cmd);
    plab::Stage upto = sc.upto;
    cmd->callback([&, upto]() {
      plab::run_pipeline(load_config(config_path, seed_overrides), out_dir, upto);
      std::cout << "done: " << out_dir << "\n";
    });
  }

  auto* sweep_cmd = app.add_subcommand("sweep", "one run per axis value with shared seeds");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--axis", axis, "alpha | eta | trigger_kind")->required();
  sweep_cmd->add_option("--values", sweep_values, "axis values")->required()->delimiter(',');
  sweep_cmd->callback([&]() {
    plab::run_sweep(load_config(config_path, seed_overrides), out_dir, axis, sweep_values);
    std::cout << "sweep done: " << out_dir << "\n";
  });

  auto* report_cmd = app.add_subcommand("report", "verify a run directory and re-emit its report");
  report_cmd->add_option("--out", out_dir, "run directory")->required();
  report_cmd->callback([&]() {
    plab::regenerate_report(out_dir);
    std::cout << "report regenerated: " << out_dir << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

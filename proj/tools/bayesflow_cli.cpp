// Command-line front end: run, validate and list builtins.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "bayesflow/catalog.hpp"
#include "bayesflow/config.hpp"
#include "bayesflow/error.hpp"
#include "bayesflow/experiment.hpp"
#include "bayesflow/parallel.hpp"
#include "json.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

int report_error(const std::string& kind, const std::string& message, int code) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metric-aware Bayesian sampling and gradient-flow experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  long long seed = -1;
  int threads = 1;

  auto* run = app.add_subcommand("run", "Run an experiment and write its outputs");
  run->add_option("config", config_path, "Experiment config file")->required();
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--seed", seed, "Override the config seed")->check(CLI::NonNegativeNumber);
  run->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  auto* validate = app.add_subcommand("validate", "Check a config without running it");
  validate->add_option("config", config_path, "Experiment config file")->required();

  auto* list = app.add_subcommand("catalog", "List builtin metrics, potentials and models");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("config", e.what(), kExitConfig);
  }

  try {
    if (list->parsed()) {
      for (const auto& e : bayesflow::catalog::entries())
        std::cout << e.kind << '\t' << e.signature << '\t' << e.description << '\n';
      return 0;
    }
    bayesflow::ExperimentConfig config = bayesflow::load_config(config_path);
    if (validate->parsed()) {
      bayesflow::validate_experiment(config);
      std::cout << nlohmann::json{{"valid", true}, {"experiment", config.experiment()}}.dump() << '\n';
      return 0;
    }
    if (seed >= 0) config.set("seed", std::to_string(seed));
    bayesflow::set_thread_count(threads);
    bayesflow::validate_experiment(config);
    const auto report = bayesflow::run_experiment(config, out_dir);
    nlohmann::json summary;
    summary["experiment"] = report.experiment;
    summary["scalars"] = report.scalars;
    summary["report"] = (std::filesystem::path(out_dir) / "report.json").string();
    std::cout << summary.dump(2) << '\n';
    return 0;
  } catch (const bayesflow::Error& e) {
    const int code = e.kind() == bayesflow::ErrorKind::config ? kExitConfig : kExitNumeric;
    return report_error(std::string(bayesflow::to_string(e.kind())), e.what(), code);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), kExitNumeric);
  }
}

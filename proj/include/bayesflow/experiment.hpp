#pragma once

// Config-driven experiments binding the library together, with reports and
// content-hashed output manifests.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "bayesflow/config.hpp"
#include "bayesflow/grid.hpp"
#include "bayesflow/metric_geometry.hpp"
#include "bayesflow/variational.hpp"
#include "json.hpp"

namespace bayesflow {

struct ManifestEntry {
  std::string path;  // relative to the output directory
  std::string sha256;
};

struct ExperimentReport {
  std::string experiment;
  ExperimentConfig config;
  std::map<std::string, double> scalars;
  nlohmann::json tables = nlohmann::json::object();
  std::vector<ManifestEntry> manifest;
  double wall_time_s = 0.0;

  nlohmann::json to_json() const;
};

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

/// Builds the [model] section: either a catalog model (`name = ou(1)`) or
/// explicit `prior`, `likelihood`, `metric` specs, plus `box` and `dim`.
BayesModel make_model(const ExperimentConfig& config);
/// Grid over the model box with spacing numerics.dx (and numerics.dy).
Grid make_grid(const ExperimentConfig& config, const BayesModel& model);

/// A catalog metric, or `sigma_inverse(a)`: a times the Hessian of the
/// target potential at the origin (the precision matrix of a Gaussian).
MetricField make_candidate_metric(const std::string& spec, const PotentialField& target, int dim);

struct MetricCandidate {
  std::string label;
  MetricField metric;
};

struct MetricRankRow {
  std::string label;
  double lambda = 0.0;
  double lipschitz = 0.0;
  bool feasible = false;
};

/// Feasible rows (Lip <= 1 + 1e-6) first, by decreasing lambda_G, then the
/// infeasible ones; ties keep candidate order.
std::vector<MetricRankRow> metric_rank(const std::vector<MetricCandidate>& candidates,
                                       const PotentialField& target, const Box& box,
                                       const Sampler& sampler);

/// Checks the config without running it (all keys resolvable, models
/// constructible, seed present for stochastic experiments).
void validate_experiment(const ExperimentConfig& config);

/// Runs the experiment, writes its files and report.json under out_dir.
ExperimentReport run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir);

}  // namespace bayesflow

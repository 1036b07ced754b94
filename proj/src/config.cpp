#include "bayesflow/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <fstream>
#include <sstream>

#include "bayesflow/error.hpp"

namespace bayesflow {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& path, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || trim(text.substr(used)) != "" || !std::isfinite(v))
    fail(ErrorKind::config, path + ": '" + text + "' is not a finite number");
  return v;
}

}  // namespace

ExperimentConfig::ExperimentConfig(std::map<std::string, std::string> values)
    : values_(std::move(values)) {}

std::string ExperimentConfig::get(const std::string& path) const {
  const auto it = values_.find(path);
  if (it == values_.end()) fail(ErrorKind::config, path + ": required field is missing");
  return it->second;
}

std::string ExperimentConfig::get(const std::string& path, const std::string& fallback) const {
  const auto it = values_.find(path);
  return it == values_.end() ? fallback : it->second;
}

double ExperimentConfig::get_double(const std::string& path) const { return to_double(path, get(path)); }

double ExperimentConfig::get_double(const std::string& path, double fallback) const {
  return has(path) ? get_double(path) : fallback;
}

long ExperimentConfig::get_int(const std::string& path) const {
  const double v = get_double(path);
  if (v != std::floor(v) || std::abs(v) > 9e15)
    fail(ErrorKind::config, path + ": '" + get(path) + "' is not an integer");
  return static_cast<long>(v);
}

long ExperimentConfig::get_int(const std::string& path, long fallback) const {
  return has(path) ? get_int(path) : fallback;
}

bool ExperimentConfig::get_bool(const std::string& path, bool fallback) const {
  if (!has(path)) return fallback;
  const std::string v = get(path);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorKind::config, path + ": '" + v + "' is not a boolean");
}

std::vector<double> ExperimentConfig::get_doubles(const std::string& path) const {
  std::vector<double> out;
  std::istringstream ss(get(path));
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(to_double(path, trim(cell)));
  if (out.empty()) fail(ErrorKind::config, path + ": expected a comma-separated list of numbers");
  return out;
}

std::optional<std::uint64_t> ExperimentConfig::seed() const {
  if (!has("seed")) return std::nullopt;
  const long v = get_int("seed");
  if (v < 0) fail(ErrorKind::config, "seed: must be nonnegative");
  return static_cast<std::uint64_t>(v);
}

ExperimentConfig parse_config(std::istream& is) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorKind::config, std::string("line ") + std::to_string(e.line()) + ": " + e.message());
  }
  std::map<std::string, std::string> values;
  for (const auto& [key, node] : tree) {
    if (node.empty()) {
      values[key] = trim(node.data());
      continue;
    }
    for (const auto& [sub, leaf] : node) values[key + "." + sub] = trim(leaf.data());
  }
  ExperimentConfig cfg(std::move(values));
  if (!cfg.has("schema_version")) fail(ErrorKind::config, "schema_version: required field is missing");
  if (cfg.get_int("schema_version") != kSchemaVersion)
    fail(ErrorKind::config, "schema_version: unsupported version " + cfg.get("schema_version") +
                                " (expected " + std::to_string(kSchemaVersion) + ")");
  cfg.experiment();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::config, "cannot open config file " + path.string());
  return parse_config(in);
}

}  // namespace bayesflow

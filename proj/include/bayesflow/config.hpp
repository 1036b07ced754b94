#pragma once

// Experiment configuration: an INI file with top-level keys (schema_version,
// experiment, seed) and [model], [numerics], [output] and experiment-specific
// sections. Lookups name the offending field path on error.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bayesflow {

inline constexpr int kSchemaVersion = 1;

class ExperimentConfig {
 public:
  ExperimentConfig() = default;
  explicit ExperimentConfig(std::map<std::string, std::string> values);

  /// Keys are "key" for top-level entries and "section.key" otherwise.
  const std::map<std::string, std::string>& values() const { return values_; }

  bool has(const std::string& path) const { return values_.count(path) != 0; }
  std::string get(const std::string& path) const;
  std::string get(const std::string& path, const std::string& fallback) const;
  double get_double(const std::string& path) const;
  double get_double(const std::string& path, double fallback) const;
  long get_int(const std::string& path) const;
  long get_int(const std::string& path, long fallback) const;
  bool get_bool(const std::string& path, bool fallback) const;
  /// Comma-separated numbers.
  std::vector<double> get_doubles(const std::string& path) const;

  void set(const std::string& path, const std::string& value) { values_[path] = value; }

  std::string experiment() const { return get("experiment"); }
  std::optional<std::uint64_t> seed() const;

 private:
  std::map<std::string, std::string> values_;
};

ExperimentConfig parse_config(std::istream& is);
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace bayesflow

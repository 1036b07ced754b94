#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bayesflow {

enum class ErrorKind {
  singular_metric,
  numeric_domain,
  invalid_domain,
  grid_mismatch,
  stability,
  scheme,
  unsupported_dimension,
  fit,
  divergence,
  out_of_domain,
  insufficient_samples,
  input,
  convergence,
  singular_prior,
  optimization,
  assembly,
  config,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; callers dispatch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void require(bool cond, ErrorKind kind, const std::string& message) {
  if (!cond) fail(kind, message);
}

}  // namespace bayesflow

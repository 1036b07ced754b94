#include "bayesflow/error.hpp"

namespace bayesflow {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::singular_metric: return "singular_metric";
    case ErrorKind::numeric_domain: return "numeric_domain";
    case ErrorKind::invalid_domain: return "invalid_domain";
    case ErrorKind::grid_mismatch: return "grid_mismatch";
    case ErrorKind::stability: return "stability";
    case ErrorKind::scheme: return "scheme";
    case ErrorKind::unsupported_dimension: return "unsupported_dimension";
    case ErrorKind::fit: return "fit";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::out_of_domain: return "out_of_domain";
    case ErrorKind::insufficient_samples: return "insufficient_samples";
    case ErrorKind::input: return "input";
    case ErrorKind::convergence: return "convergence";
    case ErrorKind::singular_prior: return "singular_prior";
    case ErrorKind::optimization: return "optimization";
    case ErrorKind::assembly: return "assembly";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, std::string(to_string(kind)) + ": " + message);
}

}  // namespace bayesflow

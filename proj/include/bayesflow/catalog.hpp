#pragma once

// Named builtin metric and potential families, constructible from text specs
// such as "constant(10,0;0,10)" or "gauss_quadratic(1,0;0,0.1)".

#include <string>
#include <vector>

#include "bayesflow/metric_geometry.hpp"

namespace bayesflow::catalog {

/// A parsed "name(args)" spec. Arguments are rows separated by ';' with
/// comma-separated numbers, so "a,b;c,d" is a 2x2 matrix.
struct Spec {
  std::string name;
  std::vector<std::vector<double>> rows;

  std::vector<double> flat() const;
  Matrix matrix() const;
  double scalar() const;
  bool empty() const { return rows.empty(); }
};

Spec parse_spec(const std::string& text);

// Metrics.
MetricField euclidean(int dim);
/// diag(1, x_1^2 + 1) on R^2, analytic derivatives.
MetricField diag_poly();
/// exp(2 c x_1) I_m, analytic derivatives.
MetricField conformal(double c, int dim);

// Potentials.
/// 0.5 (x - mean)^T Sigma^{-1} (x - mean).
PotentialField gauss_quadratic(const Matrix& sigma, const Vector& mean);
/// sum_i (x_i^2 - 1)^2 / 4.
PotentialField double_well(int dim);
/// sum_i (1 + x_i^2)^{1/4}.
PotentialField heavy_tail(int dim);

/// Builds a metric from a spec. Recognised names: euclidean, constant,
/// scaled_identity, diag_poly, conformal. `dim` applies where the family has
/// no intrinsic dimension.
MetricField make_metric(const Spec& spec, int dim);
/// Builds a potential from a spec. Recognised names: zero, gauss_quadratic,
/// double_well, heavy_tail.
PotentialField make_potential(const Spec& spec, int dim);

struct Entry {
  std::string kind;  // "metric", "potential" or "model"
  std::string name;
  std::string signature;
  std::string description;
};

/// Every builtin family, for the `catalog` CLI command.
std::vector<Entry> entries();

}  // namespace bayesflow::catalog

#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <vector>

#include "bayesflow/metric_geometry.hpp"

namespace bayesflow {

/// Uniform 1D or 2D node lattice including the box endpoints. Nodes are
/// indexed row-major with x fastest: index = iy * nx + ix.
struct Grid {
  int dim = 1;
  int nx = 0;
  int ny = 1;
  double xmin = 0.0;
  double xmax = 1.0;
  double ymin = 0.0;
  double ymax = 0.0;

  static Grid line(double xmin, double xmax, int nx);
  /// Node count chosen so the spacing is as close to dx as possible.
  static Grid line_spacing(double xmin, double xmax, double dx);
  static Grid plane(double xmin, double xmax, int nx, double ymin, double ymax, int ny);

  void validate() const;
  std::size_t size() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }
  double dx() const { return (xmax - xmin) / (nx - 1); }
  double dy() const { return dim == 2 ? (ymax - ymin) / (ny - 1) : 1.0; }
  double x(int ix) const { return ix == nx - 1 ? xmax : xmin + ix * dx(); }
  double y(int iy) const { return dim == 2 ? (iy == ny - 1 ? ymax : ymin + iy * dy()) : 0.0; }
  std::size_t index(int ix, int iy = 0) const {
    return static_cast<std::size_t>(iy) * static_cast<std::size_t>(nx) + static_cast<std::size_t>(ix);
  }
  Vector node(std::size_t idx) const;
  Box box() const;

  /// Trapezoid quadrature weights (dual-cell volumes).
  std::vector<double> weights() const;
  /// Per-axis trapezoid weights.
  std::vector<double> weights_x() const;
  std::vector<double> weights_y() const;

  friend bool operator==(const Grid& a, const Grid& b);
};

void require_same_grid(const Grid& a, const Grid& b);

/// Nonnegative node values on a Grid with trapezoid quadrature.
class GridDensity {
 public:
  GridDensity() = default;
  GridDensity(Grid grid, std::vector<double> values);

  /// Samples f at the nodes (no normalization).
  static GridDensity from_function(const Grid& grid, const std::function<double(const Vector&)>& f);

  const Grid& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }

  double mass() const;
  /// Copy rescaled to unit quadrature mass; throws when mass is not positive.
  GridDensity normalized() const;
  /// Throws scheme error on entries below -tol, clamps the rest at 0.
  void clamp_nonnegative(double tol);

  /// Mean and covariance under the density (1D: 1x1).
  Vector mean() const;
  Matrix covariance() const;

 private:
  Grid grid_;
  std::vector<double> values_;
};

/// Text format: "# grid <dim> <nx> [ny] <xmin> <xmax> [ymin ymax]" followed by
/// one value per line in row-major order, 17 significant digits.
void write_density(std::ostream& os, const GridDensity& density);
/// Same format for signed grid functions (eigenfunctions, potentials).
void write_grid_function(std::ostream& os, const Grid& grid, const std::vector<double>& values);
/// Reads the text format; rejects files whose quadrature mass differs from
/// 1 by more than 1e-6.
GridDensity read_density(std::istream& is);

/// Integral of |a - b| by quadrature.
double l1_distance(const GridDensity& a, const GridDensity& b);

}  // namespace bayesflow

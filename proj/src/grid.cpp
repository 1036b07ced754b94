#include "bayesflow/grid.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "bayesflow/error.hpp"
#include "bayesflow/simd.hpp"

namespace bayesflow {

Grid Grid::line(double xmin, double xmax, int nx) {
  Grid g;
  g.dim = 1;
  g.nx = nx;
  g.ny = 1;
  g.xmin = xmin;
  g.xmax = xmax;
  g.validate();
  return g;
}

Grid Grid::line_spacing(double xmin, double xmax, double dx) {
  require(dx > 0.0, ErrorKind::input, "grid spacing must be positive");
  const int nx = static_cast<int>(std::lround((xmax - xmin) / dx)) + 1;
  return line(xmin, xmax, nx);
}

Grid Grid::plane(double xmin, double xmax, int nx, double ymin, double ymax, int ny) {
  Grid g;
  g.dim = 2;
  g.nx = nx;
  g.ny = ny;
  g.xmin = xmin;
  g.xmax = xmax;
  g.ymin = ymin;
  g.ymax = ymax;
  g.validate();
  return g;
}

void Grid::validate() const {
  require(dim == 1 || dim == 2, ErrorKind::unsupported_dimension, "grids are 1D or 2D");
  require(nx >= 2, ErrorKind::input, "grid needs at least 2 nodes per axis");
  require(xmax > xmin, ErrorKind::invalid_domain, "grid x-range is empty");
  if (dim == 2) {
    require(ny >= 2, ErrorKind::input, "grid needs at least 2 nodes per axis");
    require(ymax > ymin, ErrorKind::invalid_domain, "grid y-range is empty");
  } else {
    require(ny == 1, ErrorKind::input, "1D grid must have ny = 1");
  }
}

Vector Grid::node(std::size_t idx) const {
  Vector p(dim);
  const int ix = static_cast<int>(idx % static_cast<std::size_t>(nx));
  p[0] = x(ix);
  if (dim == 2) p[1] = y(static_cast<int>(idx / static_cast<std::size_t>(nx)));
  return p;
}

Box Grid::box() const {
  if (dim == 1) return Box(Vector::Constant(1, xmin), Vector::Constant(1, xmax));
  Vector lo(2), hi(2);
  lo << xmin, ymin;
  hi << xmax, ymax;
  return Box(lo, hi);
}

std::vector<double> Grid::weights_x() const {
  std::vector<double> w(nx, dx());
  w.front() *= 0.5;
  w.back() *= 0.5;
  return w;
}

std::vector<double> Grid::weights_y() const {
  if (dim == 1) return {1.0};
  std::vector<double> w(ny, dy());
  w.front() *= 0.5;
  w.back() *= 0.5;
  return w;
}

std::vector<double> Grid::weights() const {
  const auto wx = weights_x();
  const auto wy = weights_y();
  std::vector<double> w(size());
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) w[index(ix, iy)] = wx[ix] * wy[iy];
  return w;
}

bool operator==(const Grid& a, const Grid& b) {
  return a.dim == b.dim && a.nx == b.nx && a.ny == b.ny && a.xmin == b.xmin && a.xmax == b.xmax &&
         a.ymin == b.ymin && a.ymax == b.ymax;
}

void require_same_grid(const Grid& a, const Grid& b) {
  require(a == b, ErrorKind::grid_mismatch, "densities live on different grids");
}

GridDensity::GridDensity(Grid grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
  grid_.validate();
  require(values_.size() == grid_.size(), ErrorKind::input, "density size does not match grid");
  for (double v : values_)
    require(std::isfinite(v) && v >= 0.0, ErrorKind::input, "density values must be finite and nonnegative");
}

GridDensity GridDensity::from_function(const Grid& grid,
                                       const std::function<double(const Vector&)>& f) {
  std::vector<double> v(grid.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(grid.node(i));
  return GridDensity(grid, std::move(v));
}

double GridDensity::mass() const { return simd::weighted_sum(grid_.weights(), values_); }

GridDensity GridDensity::normalized() const {
  const double m = mass();
  require(m > 0.0 && std::isfinite(m), ErrorKind::numeric_domain, "density has no positive mass");
  GridDensity out = *this;
  for (double& v : out.values_) v /= m;
  return out;
}

void GridDensity::clamp_nonnegative(double tol) {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (values_[i] < -tol)
      fail(ErrorKind::scheme, "negative density " + std::to_string(values_[i]) + " at node " +
                                  std::to_string(i));
    if (values_[i] < 0.0) values_[i] = 0.0;
  }
}

Vector GridDensity::mean() const {
  const auto w = grid_.weights();
  Vector m = Vector::Zero(grid_.dim);
  double mass = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const double wi = w[i] * values_[i];
    m += wi * grid_.node(i);
    mass += wi;
  }
  return m / mass;
}

Matrix GridDensity::covariance() const {
  const auto w = grid_.weights();
  const Vector mu = mean();
  Matrix c = Matrix::Zero(grid_.dim, grid_.dim);
  double mass = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const double wi = w[i] * values_[i];
    const Vector d = grid_.node(i) - mu;
    c += wi * d * d.transpose();
    mass += wi;
  }
  return c / mass;
}

void write_density(std::ostream& os, const GridDensity& density) {
  write_grid_function(os, density.grid(), density.values());
}

void write_grid_function(std::ostream& os, const Grid& g, const std::vector<double>& values) {
  require(values.size() == g.size(), ErrorKind::grid_mismatch, "value count differs from grid size");
  os << std::setprecision(17);
  os << "# grid " << g.dim << ' ' << g.nx;
  if (g.dim == 2) os << ' ' << g.ny;
  os << ' ' << g.xmin << ' ' << g.xmax;
  if (g.dim == 2) os << ' ' << g.ymin << ' ' << g.ymax;
  os << '\n';
  for (double v : values) os << v << '\n';
}

GridDensity read_density(std::istream& is) {
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), ErrorKind::input, "empty density file");
  std::istringstream header(line);
  std::string hash, word;
  Grid g;
  header >> hash >> word >> g.dim;
  require(hash == "#" && word == "grid", ErrorKind::input, "density header must start with '# grid'");
  if (g.dim == 1) {
    header >> g.nx >> g.xmin >> g.xmax;
    g.ny = 1;
  } else if (g.dim == 2) {
    header >> g.nx >> g.ny >> g.xmin >> g.xmax >> g.ymin >> g.ymax;
  } else {
    fail(ErrorKind::unsupported_dimension, "density files are 1D or 2D");
  }
  require(!header.fail(), ErrorKind::input, "malformed density header");
  g.validate();
  std::vector<double> values;
  values.reserve(g.size());
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    values.push_back(std::stod(line));
  }
  require(values.size() == g.size(), ErrorKind::input,
          "density file has " + std::to_string(values.size()) + " values, expected " +
              std::to_string(g.size()));
  GridDensity d(g, std::move(values));
  const double m = d.mass();
  require(std::abs(m - 1.0) <= 1e-6, ErrorKind::input,
          "density mass " + std::to_string(m) + " is not within 1e-6 of 1");
  return d;
}

double l1_distance(const GridDensity& a, const GridDensity& b) {
  require_same_grid(a.grid(), b.grid());
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = std::abs(a[i] - b[i]);
  return simd::weighted_sum(a.grid().weights(), diff);
}

}  // namespace bayesflow

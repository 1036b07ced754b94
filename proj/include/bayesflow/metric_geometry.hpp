#pragma once

// Differential geometry of position-dependent metrics on R^m: Christoffel
// symbols, the curvature matrices B and R, metric Hessians, and the sharp
// geodesic-convexity constant lambda_G of the relative entropy under a metric
// G together with the drift-Lipschitz normalization used to compare metrics.

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace bayesflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class DerivativeMode { analytic, finite_difference };

/// Central-difference step used throughout: max(1e-5, 1e-5 * |x|_inf).
double fd_step(const Vector& x);

/// Axis-aligned box [lower, upper].
struct Box {
  Vector lower;
  Vector upper;

  Box() = default;
  Box(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi)) {}
  static Box cube(int dim, double lo, double hi);

  int dim() const { return static_cast<int>(lower.size()); }
  /// Throws invalid_domain when empty, mismatched or degenerate.
  void validate() const;
  bool contains(const Vector& x, double slack = 0.0) const;
};

class MetricField {
 public:
  using Eval = std::function<Matrix(const Vector&)>;
  /// Returns d/dx_k G for k = 0..m-1.
  using FirstDerivatives = std::function<std::vector<Matrix>(const Vector&)>;
  /// Returns d^2/(dx_k dx_l) G at index k * m + l.
  using SecondDerivatives = std::function<std::vector<Matrix>(const Vector&)>;

  MetricField(int dim, Eval eval, FirstDerivatives d1 = {}, SecondDerivatives d2 = {});

  static MetricField constant(const Matrix& g);

  int dim() const { return dim_; }
  bool is_constant() const { return constant_; }
  DerivativeMode mode() const;

  /// Same field with derivatives forced to central finite differences.
  MetricField finite_difference() const;
  /// The field a * G with the same derivative mode.
  MetricField scaled(double a) const;

  /// G(x); checks symmetry (1e-12 relative) and finiteness.
  Matrix operator()(const Vector& x) const;
  std::vector<Matrix> first_derivatives(const Vector& x) const;
  std::vector<Matrix> second_derivatives(const Vector& x) const;

 private:
  int dim_;
  bool constant_ = false;
  Eval eval_;
  FirstDerivatives d1_;
  SecondDerivatives d2_;
};

class PotentialField {
 public:
  using Value = std::function<double(const Vector&)>;
  using Gradient = std::function<Vector(const Vector&)>;
  using Hessian = std::function<Matrix(const Vector&)>;

  /// Missing gradient / Hessian closures are replaced by central differences.
  PotentialField(int dim, Value value, Gradient gradient = {}, Hessian hessian = {});

  static PotentialField zero(int dim);
  /// 0.5 (x - mean)^T A (x - mean).
  static PotentialField quadratic(const Matrix& a, const Vector& mean);
  static PotentialField quadratic(const Matrix& a) {
    return quadratic(a, Vector::Zero(a.rows()));
  }

  int dim() const { return dim_; }
  DerivativeMode mode() const;
  bool has_analytic_hessian() const { return static_cast<bool>(hessian_); }

  double value(const Vector& x) const { return value_(x); }
  Vector gradient(const Vector& x) const;
  Matrix hessian(const Vector& x) const;

  PotentialField finite_difference() const;

  friend PotentialField operator+(const PotentialField& a, const PotentialField& b);
  PotentialField scaled(double s) const;

 private:
  int dim_;
  Value value_;
  Gradient gradient_;
  Hessian hessian_;
};

/// Connection coefficients at a point; gamma(l, i, j) is Gamma^l_{ij}.
struct ChristoffelData {
  Vector point;
  int dim = 0;
  std::vector<double> gamma;

  double operator()(int l, int i, int j) const { return gamma[(l * dim + i) * dim + j]; }
  double& operator()(int l, int i, int j) { return gamma[(l * dim + i) * dim + j]; }
};

struct CurvatureMatrices {
  Matrix b;
  Matrix r;  // Ricci matrix: Ric_g(v, v) = <R v, v>
};

ChristoffelData christoffel(const MetricField& metric, const Vector& x);
CurvatureMatrices curvature_matrices(const MetricField& metric, const Vector& x);

/// C_{ij} = Gamma^l_{ij} dF/dx_l, i.e. A(F) in the metric-Hessian identity.
Matrix connection_gradient_matrix(const ChristoffelData& gamma, const Vector& grad);

/// Matrix of the metric Hessian: Hess_g I(v, v) = <(Hess I - A(I)) v, v>.
Matrix hess_g(const PotentialField& potential, const MetricField& metric, const Vector& x);

/// Symmetric inverse square root of an SPD matrix. Eigenvalues below
/// 1e-12 * max eigenvalue raise singular_metric.
Matrix inverse_sqrt_spd(const Matrix& g);

struct Sampler {
  enum class Kind { grid, halton };
  Kind kind = Kind::grid;
  /// Points per axis for grid, total points for halton.
  int count = 9;

  static Sampler grid(int per_axis) { return {Kind::grid, per_axis}; }
  static Sampler halton(int total) { return {Kind::halton, total}; }
};

/// Deterministically ordered sample points of a box.
std::vector<Vector> sample_points(const Box& box, const Sampler& sampler);

struct ConvexityReport {
  double lambda = 0.0;
  Vector argmin_point;
  Vector argmin_direction;
  int sample_count = 0;
  Box domain;
};

/// Minimises Lambda_min(G^{-1/2} Q(x) G^{-1/2}) over the sampled points for a
/// caller-supplied symmetric form Q. Shared by lambda_G and the prior
/// curvature condition of the chi-square functional.
ConvexityReport min_metric_eigenvalue(const MetricField& metric, const Box& box,
                                      const Sampler& sampler,
                                      const std::function<Matrix(const Vector&)>& form);

/// B + Hess F - C at x.
Matrix lambda_g_form(const PotentialField& f, const MetricField& metric, const Vector& x);

/// Sharp convexity constant of KL(. | mu), mu ~ exp(-F) dx, in the
/// G-Wasserstein geometry, as an infimum over sampled points of the box.
ConvexityReport lambda_G(const PotentialField& f, const MetricField& metric, const Box& box,
                         const Sampler& sampler);

/// Sampled estimate (a lower bound) of Lip(G^{-1} grad F) over the box.
double drift_lipschitz(const PotentialField& f, const MetricField& metric, const Box& box,
                       const Sampler& sampler);

/// log sqrt(det G(x)) as a potential, with gradient 1/2 tr(G^{-1} dG).
PotentialField log_sqrt_det(const MetricField& metric);

}  // namespace bayesflow

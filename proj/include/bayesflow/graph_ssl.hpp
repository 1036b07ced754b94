#pragma once

// Bayesian semi-supervised classification on weighted graphs: Laplacian
// priors L^alpha on the zero-mean subspace, probit / logistic / Ginzburg-
// Landau models, MAP estimation and the L^alpha-preconditioned Langevin
// chain.

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "bayesflow/metric_geometry.hpp"
#include "bayesflow/rng.hpp"
#include "bayesflow/variational.hpp"

namespace bayesflow {

enum class Likelihood { probit, logistic, gl };

Likelihood parse_likelihood(const std::string& s);

/// Kernel profile K(s) = (1 - s)_+.
double hat_kernel(double s);

/// W_ij = K(|x_i - x_j| / r) for i != j, zero diagonal; points are rows.
Matrix build_graph(const Matrix& points, const std::function<double(double)>& kernel, double r);

/// Edge list "i j w" per line (0-indexed, symmetric fill); `n` nodes.
Matrix read_edge_list(std::istream& is, int n);
/// Comma-separated point rows.
Matrix read_points_csv(std::istream& is);
/// "j y_j" per line.
void read_labels(std::istream& is, std::vector<int>& index, std::vector<double>& value);

/// Subtracts the mean.
Vector project_zero_mean(const Vector& u);

class GraphModel {
 public:
  GraphModel(Matrix weights, double alpha, std::vector<int> labeled, std::vector<double> labels,
             Likelihood likelihood, double gamma, double epsilon = 1.0);

  int n() const { return static_cast<int>(weights_.rows()); }
  const Matrix& weights() const { return weights_; }
  const Matrix& laplacian() const { return laplacian_; }
  double alpha() const { return alpha_; }
  const std::vector<int>& labeled() const { return labeled_; }
  const std::vector<double>& labels() const { return labels_; }
  Likelihood likelihood() const { return likelihood_; }
  double gamma() const { return gamma_; }
  double epsilon() const { return epsilon_; }

  /// Eigenpairs of L restricted to U = {sum u = 0}, ascending; columns of
  /// eigenvectors() are orthonormal and orthogonal to the constant vector.
  const Vector& eigenvalues() const { return eigenvalues_; }
  const Matrix& eigenvectors() const { return eigenvectors_; }
  /// Smallest eigenvalue of L on U.
  double lambda_min() const { return eigenvalues_[0]; }
  bool connected() const;

 private:
  Matrix weights_;
  Matrix laplacian_;
  double alpha_;
  std::vector<int> labeled_;
  std::vector<double> labels_;
  Likelihood likelihood_;
  double gamma_;
  double epsilon_;
  Vector eigenvalues_;
  Matrix eigenvectors_;
};

/// L^power u on U by spectral calculus. Negative powers need a connected
/// graph (singular_prior otherwise).
Vector fractional_laplacian_apply(const GraphModel& model, double power, const Vector& u);

struct PhiValue {
  double value = 0.0;
  Vector gradient;
};

/// -sum log H(y_j u_j; gamma), H(w; gamma) = int_{-inf}^w exp(-t^2 / 2 gamma^2) dt.
PhiValue probit_phi(const Vector& u, const std::vector<int>& labeled,
                    const std::vector<double>& labels, double gamma);
/// Diagonal of the probit Hessian.
Vector probit_hessian_diag(const Vector& u, const std::vector<int>& labeled,
                           const std::vector<double>& labels, double gamma);
/// -sum log sigma(y_j u_j / gamma).
PhiValue logistic_phi(const Vector& u, const std::vector<int>& labeled,
                      const std::vector<double>& labels, double gamma);
Vector logistic_hessian_diag(const Vector& u, const std::vector<int>& labeled,
                             const std::vector<double>& labels, double gamma);

struct GlTerms {
  PhiValue prior_extra;  // sum over labeled j of (u_j^2 - 1)^2 / (4 eps)
  PhiValue phi;          // sum over labeled j of (y_j - u_j)^2 / (2 gamma^2)
};
GlTerms gl_potentials(const Vector& u, const std::vector<int>& labeled,
                      const std::vector<double>& labels, double gamma, double epsilon);

/// Everything beyond the Gaussian prior: phi, plus the double-well term for
/// the Ginzburg-Landau model.
PhiValue non_gaussian_terms(const GraphModel& model, const Vector& u);
Vector non_gaussian_hessian_diag(const GraphModel& model, const Vector& u);

/// Latent vector on U with its objective value and projected gradient.
struct LatentState {
  Vector u;
  double objective = 0.0;
  Vector gradient;
  int iterations = 0;
};

/// 0.5 <L^alpha u, u> + non_gaussian_terms(u).
double map_objective(const GraphModel& model, const Vector& u);

struct MapOptions {
  double tol = 1e-8;
  int max_iter = 200000;
};

/// Projected, L^{-alpha}-preconditioned gradient descent with Armijo
/// backtracking.
LatentState map_estimate(const GraphModel& model, const Vector& u0, const MapOptions& options = {});

/// X <- X - (X + L^{-alpha} P grad phi(X)) dt + sqrt(2 dt) L^{-alpha/2} P xi.
Vector precond_langevin_step(const Vector& x, const GraphModel& model, double dt,
                             const CounterRng& rng, std::uint64_t stream, std::uint64_t step);

/// A draw L^{-alpha/2} xi from the Gaussian prior on U.
Vector sample_prior(const GraphModel& model, const CounterRng& rng, std::uint64_t stream,
                    std::uint64_t step);

struct LabelSummary {
  std::vector<double> prob_plus;
  std::vector<double> std_error;
};

/// Frequency of u_i > 0 per node with its binomial standard error.
LabelSummary posterior_label_summary(const std::vector<Vector>& states);

/// Posterior restricted to u = V c for the chosen eigenvectors of L on U, as
/// a model on coefficient space R^k with Euclidean metric on `domain`. The
/// Gaussian prior (and the double-well term) become the prior potential.
BayesModel projected_posterior(const GraphModel& model, const std::vector<int>& modes, const Box& domain);

/// inf over the points of Lambda_min(L^{-alpha/2} Hess G L^{-alpha/2}) on U,
/// i.e. lambda_G of the posterior for the constant metric G = L^alpha.
double precond_convexity(const GraphModel& model, const std::vector<Vector>& points);

void write_vector_csv(std::ostream& os, const std::string& header, const Vector& v);
void write_label_summary_csv(std::ostream& os, const LabelSummary& summary);

}  // namespace bayesflow

#pragma once

// Discrete weighted Laplacian -Lap^mu_g, its spectral gap, the Poincare /
// L2-convexity checks of the Dirichlet energy, and the convex-envelope
// Poincare bound for Ginzburg-Landau posteriors.

#include <Eigen/SparseCore>
#include <string>
#include <vector>

#include "bayesflow/grid.hpp"
#include "bayesflow/pde_flows.hpp"
#include "bayesflow/variational.hpp"

namespace bayesflow {

/// Divergence-form operator A = M^{-1} K with M = diag(w_i mu_i) and K the
/// symmetric stiffness matrix with face weights G^{-1} logmean(mu_a, mu_b).
/// Nodes where mu vanishes are inactive: A ignores them and they carry no
/// mass.
class WeightedLaplacianOperator {
 public:
  WeightedLaplacianOperator(Grid grid, std::vector<double> mu, std::vector<Face> faces,
                            std::vector<double> face_weights);

  const Grid& grid() const { return grid_; }
  const std::vector<double>& mu() const { return mu_; }
  /// Node masses w_i mu_i of the grid posterior.
  const std::vector<double>& mu_weights() const { return mass_; }
  const std::vector<Face>& faces() const { return faces_; }
  const std::vector<double>& face_weights() const { return face_weights_; }
  const Eigen::SparseMatrix<double>& stiffness() const { return stiffness_; }
  std::size_t size() const { return mu_.size(); }

  /// (A f)_i, computed face by face so constants map to exactly 0.
  std::vector<double> apply(const std::vector<double>& f) const;
  /// <f, K f> = sum over faces of weight * (f_b - f_a)^2.
  double dirichlet_form(const std::vector<double>& f) const;
  double inner(const std::vector<double>& f, const std::vector<double>& h) const;
  double mean(const std::vector<double>& f) const;

  /// Component label per node (-1 for inactive nodes) over faces with
  /// positive weight; returns the number of components.
  int components(std::vector<int>& label) const;

 private:
  Grid grid_;
  std::vector<double> mu_;
  std::vector<double> mass_;
  std::vector<Face> faces_;
  std::vector<double> face_weights_;
  Eigen::SparseMatrix<double> stiffness_;
};

/// Potentials may be +inf (zero posterior density); NaN or -inf raise an
/// assembly error naming the nodes.
WeightedLaplacianOperator assemble_weighted_laplacian(const BayesModel& model, const Grid& grid);

struct SpectralResult {
  double lambda2 = 0.0;
  std::vector<double> eigenfunction;  // mu-mean zero, unit mu-norm
  double residual = 0.0;              // |A f - lambda2 f|_mu
  int n_iter = 0;
};

struct SpectralOptions {
  int max_iter = 5000;
  double tol = 1e-10;
};

/// Inverse iteration on the mu-mean-zero subspace (one node pinned, constants
/// projected out). Disconnected supports give lambda2 = 0 exactly.
SpectralResult spectral_gap(const WeightedLaplacianOperator& op, const SpectralOptions& options = {});
/// Dense generalized eigensolver over the active nodes; at most 2000 of them.
SpectralResult dense_spectral_gap(const WeightedLaplacianOperator& op);

/// {"lambda2", "residual", "n_iter"}.
std::string spectral_json(const SpectralResult& result);

struct PoincareReport {
  double lambda2 = 0.0;
  // (a) lambda2 |f|^2 <= D(f) + 1e-8 for each mean-zero trial.
  bool poincare_holds = true;
  double min_poincare_slack = 0.0;
  // (b) D(t f0 + (1-t) f1) + t(1-t) D(f0 - f1) = t D(f0) + (1-t) D(f1).
  bool parallelogram_holds = true;
  double max_parallelogram_error = 0.0;
  // (c) D(t f0 + (1-t) f1) + lambda2 t(1-t) |f0 - f1|^2 <= t D(f0) + (1-t) D(f1)
  // for the mass-one pairs 1 + f.
  bool convexity_holds = true;
  double min_convexity_slack = 0.0;
  /// Largest kappa with (c) holding for kappa/2 in place of lambda2 over the
  /// span of the pair differences (Rayleigh-Ritz); equals 2 lambda2 for a
  /// rich enough trial set. Infinite when every pair difference vanishes.
  double best_convexity_constant = 0.0;
  std::size_t trial_count = 0;
};

/// Trials must be mu-mean zero (input error otherwise); consecutive trials
/// form the pairs for (b) and (c).
PoincareReport poincare_convexity_check(const WeightedLaplacianOperator& op,
                                        const std::vector<std::vector<double>>& trials,
                                        const SpectralResult& gap);
PoincareReport poincare_convexity_check(const WeightedLaplacianOperator& op,
                                        const std::vector<std::vector<double>>& trials);

/// Greatest convex minorant of samples on a uniform grid (lower hull,
/// monotone chain, linear between hull vertices).
std::vector<double> convex_envelope_1d(const std::vector<double>& w);

/// exp(-k / eps) * lambda_min_L^alpha.
double gl_poincare_bound(int k, double epsilon, double lambda_min_L, double alpha);

}  // namespace bayesflow

#pragma once

// Divergences and energy functionals on grid densities, and the closed-form
// geodesic-convexity criteria for the KL and chi-square functionals.

#include <memory>

#include "bayesflow/ext_real.hpp"
#include "bayesflow/grid.hpp"
#include "bayesflow/metric_geometry.hpp"

namespace bayesflow {

/// Prior exp(-Psi) vol_g, negative log-likelihood phi, posterior
/// mu ~ exp(-phi) pi, all restricted to a box.
class BayesModel {
 public:
  BayesModel(PotentialField prior, PotentialField likelihood, MetricField metric, Box domain);

  const PotentialField& prior() const { return prior_; }
  const PotentialField& likelihood() const { return likelihood_; }
  const MetricField& metric() const { return metric_; }
  const Box& domain() const { return domain_; }
  int dim() const { return metric_.dim(); }

  /// Set when the box is the actual state space (e.g. a flat prior on an
  /// interval) rather than a truncation of R^m.
  bool bounded_domain() const { return bounded_domain_; }
  BayesModel& set_bounded_domain(bool b) {
    bounded_domain_ = b;
    return *this;
  }

  /// Psi + phi.
  PotentialField total_potential() const { return prior_ + likelihood_; }

  /// Normalized prior pi on the grid: exp(-Psi) sqrt(det G) / quadrature.
  GridDensity prior_density(const Grid& grid) const;
  /// Normalized posterior mu on the grid.
  GridDensity posterior_density(const Grid& grid) const;
  /// log Z with Z = int exp(-phi) d pi, by quadrature on the grid. Cached per
  /// grid; concurrent first calls compute identical values.
  double log_Z(const Grid& grid) const;

  /// Throws invalid_domain if the posterior density at the grid boundary
  /// exceeds 1e-12 times its maximum, unless bounded_domain() is set.
  void validate_boundary_decay(const Grid& grid) const;

  /// Node values of Psi, phi and log sqrt(det G).
  std::vector<double> prior_values(const Grid& grid) const;
  std::vector<double> likelihood_values(const Grid& grid) const;
  std::vector<double> log_volume_values(const Grid& grid) const;

 private:
  PotentialField prior_;
  PotentialField likelihood_;
  MetricField metric_;
  Box domain_;
  bool bounded_domain_ = false;
  struct Cache;
  std::shared_ptr<Cache> cache_;
};

ExtReal kl_divergence(const GridDensity& nu1, const GridDensity& nu2);
ExtReal chi2_divergence(const GridDensity& nu1, const GridDensity& nu2);

/// KL(nu | pi) + int phi d nu.
ExtReal j_kl(const GridDensity& nu, const BayesModel& model);
/// chi2(nu | pi) + int (exp(phi) - 1) d nu.
ExtReal j_chi2(const GridDensity& nu, const BayesModel& model);

/// int <G^{-1} grad f, grad f> d mu with central differences (one-sided at
/// the boundary).
double dirichlet_energy(const std::vector<double>& f, const GridDensity& mu,
                        const MetricField& metric);

/// lambda_G of F = Psi + phi - log sqrt(det G), i.e. the sampled infimum of
/// Ric_g + Hess_g Psi + Hess_g phi over g-unit vectors.
ConvexityReport kl_convexity_constant(const BayesModel& model, const Box& domain,
                                      const Sampler& sampler);

struct Chi2ConvexityResult {
  bool condition1 = false;
  /// Sampled infimum of Ric_g + Hess_g Psi + <grad_g Psi, .>^2 / (m + 1).
  double margin = 0.0;
  /// Geodesic-convexity constant of phi alone (metric Hessian, no Ricci term).
  double lambda = 0.0;
  ConvexityReport prior_report;
  ConvexityReport likelihood_report;
};

Chi2ConvexityResult chi2_convexity_check(const BayesModel& model, const Box& domain,
                                         const Sampler& sampler);

}  // namespace bayesflow

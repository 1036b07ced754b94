#pragma once

// Conservative finite-volume time stepping of the KL / Dirichlet gradient
// flow (Fokker-Planck form and weighted-Laplacian form) and of the weighted
// porous-medium equation of the chi-square flow, on 1D/2D node grids with
// no-flux boundaries.

#include <Eigen/SparseCore>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bayesflow/grid.hpp"
#include "bayesflow/variational.hpp"

namespace bayesflow {

enum class Scheme { explicit_euler, semi_implicit };

/// Which density the state carries: theta = d mu_t / d vol_g,
/// rho = d mu_t / d mu, rho_tilde = d mu_t / d pi.
enum class Representation { theta, rho, rho_tilde };

struct FlowState {
  double t = 0.0;
  GridDensity density;
  Representation representation = Representation::theta;
  double dt = 1e-3;
  Scheme scheme = Scheme::semi_implicit;
};

/// One face of the dual mesh between nodes a < b.
struct Face {
  std::size_t a;
  std::size_t b;
  double coef;  // G^{-1} * face area / node distance
};

std::vector<Face> build_faces(const Grid& grid, const MetricField& metric);

/// Logarithmic mean of exp(la) and exp(lb).
double log_mean_exp(double la, double lb);

/// The linear KL / Dirichlet flow on a fixed grid. Holds the assembled
/// operators; the factorization cache makes an instance single-owner.
class KlFlow {
 public:
  KlFlow(const BayesModel& model, const Grid& grid);

  const Grid& grid() const { return grid_; }
  /// Discrete stationary density (Lebesgue-normalized posterior on the grid).
  const GridDensity& stationary() const { return mu_; }

  /// Largest explicit step that keeps the update positive.
  double max_explicit_dt() const;

  /// theta <-> Lebesgue density p, and p <-> rho = p / mu.
  GridDensity theta_from_lebesgue(const GridDensity& p) const;
  GridDensity lebesgue_from_theta(const GridDensity& theta) const;
  GridDensity rho_from_lebesgue(const GridDensity& p) const;
  GridDensity lebesgue_from_rho(const GridDensity& rho) const;

  FlowState step_fokker_planck(const FlowState& state) const;
  FlowState step_weighted_laplacian(const FlowState& state) const;

  const std::vector<Face>& faces() const { return faces_; }
  const std::vector<double>& log_mu() const { return log_mu_; }

 private:
  Eigen::SparseMatrix<double> fokker_planck_matrix(double dt) const;
  Eigen::SparseMatrix<double> weighted_laplacian_matrix(double dt) const;

  Grid grid_;
  std::vector<double> weights_;
  std::vector<double> log_mu_;
  std::vector<double> log_vol_;
  GridDensity mu_;
  std::vector<Face> faces_;
  // Two-point flux coefficients: flux = fwd * p_b - bwd * p_a.
  std::vector<double> fwd_;
  std::vector<double> bwd_;
  struct Solvers;
  std::shared_ptr<Solvers> solvers_;
};

/// Explicit conservative solver for the weighted porous-medium equation
/// d rho~/dt = Lap^pi_g(rho~^2) + div^pi_g(rho~ grad_g phi).
class PorousMediumFlow {
 public:
  PorousMediumFlow(const BayesModel& model, const Grid& grid);

  const Grid& grid() const { return grid_; }
  const GridDensity& prior() const { return pi_; }

  /// Largest stable explicit step for the given state.
  double stable_dt(const GridDensity& rho_tilde) const;
  /// Bound checked against user-supplied steps:
  /// dx^2 / (4 sup(2 rho~) sup eig(G^{-1})), tightened by the face weights.
  double step_bound(const GridDensity& rho_tilde) const;

  FlowState step(const FlowState& state) const;

  /// Fixed point (c - phi/2)_+ with c fixed by unit pi-mass.
  GridDensity stationary() const;

  /// Lyapunov functional of this PDE: int rho~^2 d pi + int phi rho~ d pi.
  double energy(const GridDensity& rho_tilde) const;
  /// pi-mass of rho~, conserved by the scheme.
  double mass(const GridDensity& rho_tilde) const;

  GridDensity measure_from_rho_tilde(const GridDensity& rho_tilde) const;
  GridDensity rho_tilde_from_measure(const GridDensity& p) const;

 private:
  Grid grid_;
  std::vector<double> weights_;
  GridDensity pi_;
  std::vector<double> phi_;
  std::vector<Face> faces_;
  std::vector<double> face_weight_;  // coef * logmean(pi_a, pi_b)
  std::vector<double> inv_mass_;     // 1 / (w_i pi_i)
  double max_ginv_ = 1.0;
};

// Single-call conveniences matching the operation catalogue.
FlowState step_fokker_planck(const FlowState& state, const BayesModel& model);
FlowState step_weighted_laplacian(const FlowState& state, const BayesModel& model);
FlowState step_porous_medium(const FlowState& state, const BayesModel& model);

/// W2 between two 1D densities via quantile coupling at 2048 midpoints.
double wasserstein_1d(const GridDensity& nu1, const GridDensity& nu2);

enum class FlowKind { kl_fp, chi2_pm };
enum class Functional { kl, chi2, l2, w2 };

struct DecayCurve {
  std::vector<double> times;
  std::vector<double> values;
  double fitted_rate = 0.0;
  double window_begin = 0.0;
  double window_end = 0.0;
};

/// Least-squares slope of log(value) against t over [begin, end]; values
/// that are not positive are skipped. Fewer than 3 points raises a fit error.
double fit_log_rate(const std::vector<double>& times, const std::vector<double>& values,
                    double begin, double end);

struct DecayOptions {
  double t_end = 2.0;
  double record_every = 0.05;
  double dt = 1e-3;  // kl_fp step; chi2_pm picks its own stable step
  Scheme scheme = Scheme::semi_implicit;
  double window_begin = 0.0;
  double window_end = 0.0;  // 0 means t_end
  bool fit = true;          // false leaves fitted_rate NaN
};

/// Evolves a Lebesgue probability density on the model grid and records the
/// functional distance to the flow's stationary measure.
DecayCurve decay_curve(const BayesModel& model, const GridDensity& initial, FlowKind flow,
                       Functional functional, const DecayOptions& options);

/// CSV: "t,value" rows and a trailing "# fitted_rate=<r> window=[a,b]".
void write_decay_curve(std::ostream& os, const DecayCurve& curve);

FlowKind parse_flow_kind(const std::string& s);
Functional parse_functional(const std::string& s);

}  // namespace bayesflow

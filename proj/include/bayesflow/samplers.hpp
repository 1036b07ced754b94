#pragma once

// Euler-Maruyama particle simulation of the constant-metric Langevin
// diffusion and of the nonlinear chi-square diffusion driven by a
// pre-computed porous-medium density, with ensemble diagnostics.

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "bayesflow/grid.hpp"
#include "bayesflow/rng.hpp"
#include "bayesflow/variational.hpp"

namespace bayesflow {

/// N particles in R^m, stored row-major (particle-major).
struct ParticleEnsemble {
  int dim = 1;
  std::vector<double> positions;
  double t = 0.0;
  std::uint64_t rng_seed = 0;
  std::uint64_t step_count = 0;

  ParticleEnsemble() = default;
  ParticleEnsemble(int dim, std::vector<double> positions, std::uint64_t seed);
  /// All particles at one point.
  static ParticleEnsemble filled(std::size_t count, const Vector& x, std::uint64_t seed);

  std::size_t size() const { return positions.size() / static_cast<std::size_t>(dim); }
  double at(std::size_t particle, int coord) const {
    return positions[particle * static_cast<std::size_t>(dim) + static_cast<std::size_t>(coord)];
  }
  Vector particle(std::size_t i) const;
  void validate() const;
};

/// Draws count independent samples of a 1D grid density by inverse CDF of its
/// piecewise-linear interpolant. Stream `stream` of the seeded generator.
ParticleEnsemble sample_density_1d(const GridDensity& density, std::size_t count,
                                   std::uint64_t seed, std::uint64_t stream = 0);

/// X <- X - (G^{-1} grad Psi + G^{-1} grad phi) dt + sqrt(2 dt) G^{-1/2} xi.
/// Requires a constant metric.
ParticleEnsemble langevin_step(const ParticleEnsemble& ensemble, const BayesModel& model,
                               double dt);

/// rho~(t, x) on a grid, known at increasing snapshot times.
class DensityHistory {
 public:
  void push(double t, GridDensity rho_tilde);
  bool empty() const { return snapshots_.empty(); }
  std::size_t size() const { return snapshots_.size(); }
  /// Snapshot whose time is nearest to t.
  const GridDensity& nearest(double t) const;
  /// Linear (1D) or bilinear (2D) interpolation at x of the snapshot nearest
  /// to t, clipped at 0. Throws out_of_domain outside the grid.
  double value(double t, const Vector& x) const;
  double first_time() const { return snapshots_.front().first; }
  double last_time() const { return snapshots_.back().first; }

 private:
  std::vector<std::pair<double, GridDensity>> snapshots_;
};

/// Interpolated grid value at x, clipped at 0; throws outside the grid.
double interpolate(const GridDensity& f, const Vector& x);

enum class OutOfDomain { halt, reflect };

/// X <- X - (rho~ G^{-1} grad Psi + G^{-1} grad phi) dt
///        + sqrt(2 dt rho~) G^{-1/2} xi,   rho~ = rho~(t, X).
/// Particles leaving the grid box either raise out_of_domain or are mirrored
/// back in.
ParticleEnsemble chi2_step(const ParticleEnsemble& ensemble, const BayesModel& model,
                           const DensityHistory& rho_tilde, double dt,
                           OutOfDomain policy = OutOfDomain::halt);

struct EnsembleStats {
  Vector mean;
  Matrix covariance;
  GridDensity histogram;
  double ess_proxy = 0.0;
};

/// Integrated autocorrelation time 1 + 2 sum rho(k), truncated at the first
/// non-positive pair sum.
double integrated_autocorrelation(const std::vector<double>& trace);

/// Mean, unbiased covariance, nearest-node histogram normalized to unit mass
/// on `bins` (particles outside are dropped before normalizing), and an
/// effective sample size len(trace) / tau from the recorded coordinate-1
/// trace. An empty trace gives ess_proxy = N.
EnsembleStats ensemble_stats(const ParticleEnsemble& ensemble, const Grid& bins,
                             const std::vector<double>& trace = {});

/// Rows "t,particle_id,x1[,x2]" for every `thin`-th particle.
void write_trace_header(std::ostream& os, int dim);
void write_trace_rows(std::ostream& os, const ParticleEnsemble& ensemble, std::size_t thin);

/// JSON object {"t", "mean", "cov", "ess_proxy"}.
std::string stats_json(double t, const EnsembleStats& stats);

}  // namespace bayesflow

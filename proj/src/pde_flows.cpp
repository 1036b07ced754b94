#include "bayesflow/pde_flows.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <ostream>

#include "bayesflow/error.hpp"
#include "bayesflow/simd.hpp"

namespace bayesflow {

namespace {

// Posterior node density below which the rho-form weighted Laplacian holds a
// node fixed; its mass has underflowed and rho carries no information there.
constexpr double kHeldMass = 1e-250;

// expm1(z) / z, continuous at 0.
double phi1(double z) {
  if (std::abs(z) < 1e-8) return 1.0 + 0.5 * z;
  return std::expm1(z) / z;
}

std::vector<double> clamp_values(std::vector<double> v, double rel_tol, const char* what) {
  double top = 0.0;
  for (double x : v) {
    require(std::isfinite(x), ErrorKind::scheme, std::string(what) + " produced a non-finite value");
    top = std::max(top, std::abs(x));
  }
  const double tol = rel_tol * top;
  for (double& x : v) {
    if (x < -tol)
      fail(ErrorKind::scheme, std::string(what) + " produced a negative density value " +
                                  std::to_string(x));
    if (x < 0.0) x = 0.0;
  }
  return v;
}

std::vector<double> normalized_log(const std::vector<double>& lw, const Grid& grid) {
  const double top = *std::max_element(lw.begin(), lw.end());
  require(std::isfinite(top), ErrorKind::numeric_domain, "log-density is not finite on the grid");
  std::vector<double> e(lw.size());
  for (std::size_t i = 0; i < lw.size(); ++i) e[i] = std::exp(lw[i] - top);
  const double shift = top + std::log(simd::weighted_sum(grid.weights(), e));
  std::vector<double> out(lw.size());
  for (std::size_t i = 0; i < lw.size(); ++i) out[i] = lw[i] - shift;
  return out;
}

std::vector<double> exp_of(const std::vector<double>& l) {
  std::vector<double> out(l.size());
  for (std::size_t i = 0; i < l.size(); ++i) out[i] = std::exp(l[i]);
  return out;
}

Eigen::VectorXd as_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> as_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

double log_mean_exp(double la, double lb) { return std::exp(lb) * phi1(la - lb); }

std::vector<Face> build_faces(const Grid& grid, const MetricField& metric) {
  grid.validate();
  require(metric.dim() == grid.dim, ErrorKind::grid_mismatch, "metric and grid dimensions differ");
  std::vector<Face> faces;
  const auto wy = grid.dim == 2 ? grid.weights_y() : std::vector<double>(1, 1.0);
  const auto wx = grid.weights_x();
  auto inverse_diag = [&](const Vector& mid, int axis) {
    const Matrix g = metric(mid);
    double off = 0.0;
    for (int i = 0; i < g.rows(); ++i)
      for (int j = 0; j < g.cols(); ++j)
        if (i != j) off = std::max(off, std::abs(g(i, j)));
    if (grid.dim == 2 && off > 1e-14 * g.diagonal().cwiseAbs().maxCoeff())
      fail(ErrorKind::unsupported_dimension,
           "2D grid flows support diagonal metrics only");
    require(g(axis, axis) > 0.0, ErrorKind::singular_metric, "metric is not positive definite");
    return 1.0 / g(axis, axis);
  };
  for (int iy = 0; iy < grid.ny; ++iy) {
    for (int ix = 0; ix + 1 < grid.nx; ++ix) {
      const std::size_t a = grid.index(ix, iy);
      const std::size_t b = grid.index(ix + 1, iy);
      const Vector mid = 0.5 * (grid.node(a) + grid.node(b));
      faces.push_back({a, b, inverse_diag(mid, 0) * wy[static_cast<std::size_t>(iy)] / grid.dx()});
    }
  }
  if (grid.dim == 2) {
    for (int iy = 0; iy + 1 < grid.ny; ++iy) {
      for (int ix = 0; ix < grid.nx; ++ix) {
        const std::size_t a = grid.index(ix, iy);
        const std::size_t b = grid.index(ix, iy + 1);
        const Vector mid = 0.5 * (grid.node(a) + grid.node(b));
        faces.push_back({a, b, inverse_diag(mid, 1) * wx[static_cast<std::size_t>(ix)] / grid.dy()});
      }
    }
  }
  return faces;
}

// ------------------------------------------------------------------ KL flow

struct KlFlow::Solvers {
  std::mutex mutex;
  std::map<double, std::shared_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>>> lu;
  std::map<double, std::shared_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>> ldlt;
};

KlFlow::KlFlow(const BayesModel& model, const Grid& grid)
    : grid_(grid), weights_(grid.weights()), solvers_(std::make_shared<Solvers>()) {
  const auto psi = model.prior_values(grid);
  const auto phi = model.likelihood_values(grid);
  log_vol_ = model.log_volume_values(grid);
  std::vector<double> lw(psi.size());
  for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = -psi[i] - phi[i] + log_vol_[i];
  log_mu_ = normalized_log(lw, grid);
  mu_ = GridDensity(grid, exp_of(log_mu_));
  faces_ = build_faces(grid, model.metric());
  fwd_.resize(faces_.size());
  bwd_.resize(faces_.size());
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    const double z = log_mu_[faces_[f].a] - log_mu_[faces_[f].b];
    fwd_[f] = faces_[f].coef * phi1(z);
    bwd_[f] = faces_[f].coef * phi1(-z);
  }
}

double KlFlow::max_explicit_dt() const {
  std::vector<double> out(grid_.size(), 0.0);
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    out[faces_[f].a] += bwd_[f];
    out[faces_[f].b] += fwd_[f];
  }
  double dt = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i] > 0.0) dt = std::min(dt, weights_[i] / out[i]);
  return dt;
}

GridDensity KlFlow::theta_from_lebesgue(const GridDensity& p) const {
  require_same_grid(p.grid(), grid_);
  std::vector<double> v(p.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = p[i] * std::exp(-log_vol_[i]);
  return GridDensity(grid_, std::move(v));
}

GridDensity KlFlow::lebesgue_from_theta(const GridDensity& theta) const {
  require_same_grid(theta.grid(), grid_);
  std::vector<double> v(theta.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = theta[i] * std::exp(log_vol_[i]);
  return GridDensity(grid_, std::move(v));
}

GridDensity KlFlow::rho_from_lebesgue(const GridDensity& p) const {
  require_same_grid(p.grid(), grid_);
  std::vector<double> v(p.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = p[i] * std::exp(-log_mu_[i]);
  return GridDensity(grid_, std::move(v));
}

GridDensity KlFlow::lebesgue_from_rho(const GridDensity& rho) const {
  require_same_grid(rho.grid(), grid_);
  std::vector<double> v(rho.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = rho[i] * mu_[i];
  return GridDensity(grid_, std::move(v));
}

Eigen::SparseMatrix<double> KlFlow::fokker_planck_matrix(double dt) const {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(grid_.size() + 4 * faces_.size());
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    const auto ii = static_cast<int>(i);
    t.emplace_back(ii, ii, weights_[i]);
  }
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    const auto a = static_cast<int>(faces_[f].a);
    const auto b = static_cast<int>(faces_[f].b);
    // w (p' - p) / dt = div flux(p'), flux = fwd p_b - bwd p_a leaving a.
    t.emplace_back(a, b, -dt * fwd_[f]);
    t.emplace_back(a, a, dt * bwd_[f]);
    t.emplace_back(b, b, dt * fwd_[f]);
    t.emplace_back(b, a, -dt * bwd_[f]);
  }
  const auto n = static_cast<Eigen::Index>(grid_.size());
  Eigen::SparseMatrix<double> m(n, n);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

Eigen::SparseMatrix<double> KlFlow::weighted_laplacian_matrix(double dt) const {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(grid_.size() + 4 * faces_.size());
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    const auto ii = static_cast<int>(i);
    // Nodes whose posterior mass underflows carry no rho; hold them fixed.
    t.emplace_back(ii, ii, mu_[i] > kHeldMass ? weights_[i] * mu_[i] : 1.0);
  }
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    const auto a = static_cast<int>(faces_[f].a);
    const auto b = static_cast<int>(faces_[f].b);
    const double s = dt * faces_[f].coef * log_mean_exp(log_mu_[faces_[f].a], log_mu_[faces_[f].b]);
    t.emplace_back(a, a, s);
    t.emplace_back(b, b, s);
    t.emplace_back(a, b, -s);
    t.emplace_back(b, a, -s);
  }
  const auto n = static_cast<Eigen::Index>(grid_.size());
  Eigen::SparseMatrix<double> m(n, n);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

namespace {

void check_step(const FlowState& state, Representation expected, const char* what) {
  require(state.representation == expected, ErrorKind::input,
          std::string(what) + " received a state in the wrong representation");
  require(std::isfinite(state.dt) && state.dt > 0.0, ErrorKind::input, "time step must be positive");
}

}  // namespace

FlowState KlFlow::step_fokker_planck(const FlowState& state) const {
  check_step(state, Representation::theta, "step_fokker_planck");
  const GridDensity p = lebesgue_from_theta(state.density);
  std::vector<double> next(p.size());
  if (state.scheme == Scheme::explicit_euler) {
    const double limit = max_explicit_dt();
    if (state.dt > limit)
      fail(ErrorKind::stability, "explicit step " + std::to_string(state.dt) +
                                     " exceeds the stability bound " + std::to_string(limit));
    const std::size_t n = p.size();
    if (grid_.dim == 1) {
      std::vector<double> a(n + 1, 0.0), b(n + 1, 0.0), face(n + 1), inv(n), rate(n);
      for (std::size_t f = 0; f < faces_.size(); ++f) {
        a[f + 1] = fwd_[f];
        b[f + 1] = bwd_[f];
      }
      for (std::size_t i = 0; i < n; ++i) inv[i] = 1.0 / weights_[i];
      const auto& k = simd::kernels();
      k.face_flux(p.values().data(), a.data(), b.data(), face.data(), n);
      k.flux_divergence(face.data(), inv.data(), rate.data(), n);
      next = p.values();
      k.axpy(state.dt, rate.data(), next.data(), n);
    } else {
      std::vector<double> rate(n, 0.0);
      for (std::size_t f = 0; f < faces_.size(); ++f) {
        const double flux = fwd_[f] * p[faces_[f].b] - bwd_[f] * p[faces_[f].a];
        rate[faces_[f].a] += flux;
        rate[faces_[f].b] -= flux;
      }
      for (std::size_t i = 0; i < n; ++i) next[i] = p[i] + state.dt * (rate[i] / weights_[i]);
    }
  } else {
    std::shared_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> lu;
    {
      std::lock_guard lock(solvers_->mutex);
      auto& slot = solvers_->lu[state.dt];
      if (!slot) {
        slot = std::make_shared<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
        auto m = fokker_planck_matrix(state.dt);
        slot->analyzePattern(m);
        slot->factorize(m);
        require(slot->info() == Eigen::Success, ErrorKind::scheme,
                "Fokker-Planck system factorization failed");
      }
      lu = slot;
    }
    Eigen::VectorXd rhs = as_eigen(p.values()).cwiseProduct(as_eigen(weights_));
    next = as_std(lu->solve(rhs));
  }
  FlowState out = state;
  out.t = state.t + state.dt;
  out.density = theta_from_lebesgue(GridDensity(grid_, clamp_values(std::move(next), 1e-10, "Fokker-Planck step")));
  return out;
}

FlowState KlFlow::step_weighted_laplacian(const FlowState& state) const {
  check_step(state, Representation::rho, "step_weighted_laplacian");
  require_same_grid(state.density.grid(), grid_);
  const auto& rho = state.density.values();
  const std::size_t n = rho.size();
  std::vector<double> next(n);
  if (state.scheme == Scheme::explicit_euler) {
    const double limit = max_explicit_dt();
    if (state.dt > limit)
      fail(ErrorKind::stability, "explicit step " + std::to_string(state.dt) +
                                     " exceeds the stability bound " + std::to_string(limit));
    std::vector<double> rate(n, 0.0);
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const double s = faces_[f].coef * log_mean_exp(log_mu_[faces_[f].a], log_mu_[faces_[f].b]);
      const double flux = s * (rho[faces_[f].b] - rho[faces_[f].a]);
      rate[faces_[f].a] += flux;
      rate[faces_[f].b] -= flux;
    }
    for (std::size_t i = 0; i < n; ++i)
      next[i] = mu_[i] > kHeldMass ? rho[i] + state.dt * (rate[i] / (weights_[i] * mu_[i])) : rho[i];
  } else {
    std::shared_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> ldlt;
    {
      std::lock_guard lock(solvers_->mutex);
      auto& slot = solvers_->ldlt[state.dt];
      if (!slot) {
        slot = std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>();
        slot->compute(weighted_laplacian_matrix(state.dt));
        require(slot->info() == Eigen::Success, ErrorKind::scheme,
                "weighted Laplacian system factorization failed");
      }
      ldlt = slot;
    }
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
      rhs[static_cast<Eigen::Index>(i)] = mu_[i] > kHeldMass ? weights_[i] * mu_[i] * rho[i] : rho[i];
    next = as_std(ldlt->solve(rhs));
  }
  FlowState out = state;
  out.t = state.t + state.dt;
  out.density = GridDensity(grid_, clamp_values(std::move(next), 1e-10, "weighted Laplacian step"));
  return out;
}

// ------------------------------------------------------------ porous medium

PorousMediumFlow::PorousMediumFlow(const BayesModel& model, const Grid& grid)
    : grid_(grid), weights_(grid.weights()) {
  const auto psi = model.prior_values(grid);
  const auto lv = model.log_volume_values(grid);
  phi_ = model.likelihood_values(grid);
  std::vector<double> lw(psi.size());
  for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = -psi[i] + lv[i];
  const auto log_pi = normalized_log(lw, grid);
  pi_ = GridDensity(grid, exp_of(log_pi));
  faces_ = build_faces(grid, model.metric());
  face_weight_.resize(faces_.size());
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    face_weight_[f] = faces_[f].coef * log_mean_exp(log_pi[faces_[f].a], log_pi[faces_[f].b]);
    max_ginv_ = std::max(max_ginv_, faces_[f].coef);
  }
  inv_mass_.resize(grid.size());
  for (std::size_t i = 0; i < inv_mass_.size(); ++i) {
    require(pi_[i] > 0.0, ErrorKind::numeric_domain, "prior density underflows on the grid");
    inv_mass_[i] = 1.0 / (weights_[i] * pi_[i]);
  }
}

double PorousMediumFlow::step_bound(const GridDensity& rho_tilde) const {
  require_same_grid(rho_tilde.grid(), grid_);
  const auto& r = rho_tilde.values();
  std::vector<double> rate(r.size(), 0.0);
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    const std::size_t a = faces_[f].a, b = faces_[f].b;
    const double slope = std::abs(2.0 * (r[b] - r[a]) + (phi_[b] - phi_[a]));
    const double c = face_weight_[f] * (2.0 * std::max(r[a], r[b]) + slope);
    rate[a] += c;
    rate[b] += c;
  }
  double top = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) top = std::max(top, rate[i] * inv_mass_[i]);
  return top > 0.0 ? 1.0 / top : std::numeric_limits<double>::infinity();
}

double PorousMediumFlow::stable_dt(const GridDensity& rho_tilde) const {
  return 0.5 * step_bound(rho_tilde);
}

FlowState PorousMediumFlow::step(const FlowState& state) const {
  check_step(state, Representation::rho_tilde, "step_porous_medium");
  require_same_grid(state.density.grid(), grid_);
  const double bound = step_bound(state.density);
  if (state.dt > bound)
    fail(ErrorKind::stability, "explicit porous-medium step " + std::to_string(state.dt) +
                                   " exceeds the stability bound " + std::to_string(bound));
  const auto& r = state.density.values();
  const std::size_t n = r.size();
  std::vector<double> rate(n, 0.0);
  if (grid_.dim == 1) {
    std::vector<double> coef(n + 1, 0.0), face(n + 1);
    for (std::size_t f = 0; f < faces_.size(); ++f) coef[f + 1] = face_weight_[f];
    const auto& k = simd::kernels();
    k.pme_face_flux(r.data(), phi_.data(), coef.data(), face.data(), n);
    k.flux_divergence(face.data(), inv_mass_.data(), rate.data(), n);
  } else {
    std::vector<double> acc(n, 0.0);
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const std::size_t a = faces_[f].a, b = faces_[f].b;
      const double drive = 2.0 * (r[b] - r[a]) + (phi_[b] - phi_[a]);
      const double donor = std::max(0.0, drive > 0.0 ? r[b] : r[a]);
      const double mob = std::min(std::max(0.0, 0.5 * (r[a] + r[b])), donor);
      const double flux = (face_weight_[f] * mob) * drive;
      acc[a] += flux;
      acc[b] -= flux;
    }
    for (std::size_t i = 0; i < n; ++i) rate[i] = acc[i] * inv_mass_[i];
  }
  std::vector<double> next = r;
  simd::kernels().axpy(state.dt, rate.data(), next.data(), n);
  FlowState out = state;
  out.t = state.t + state.dt;
  out.density = GridDensity(grid_, clamp_values(std::move(next), 1e-6, "porous-medium step"));
  return out;
}

GridDensity PorousMediumFlow::stationary() const {
  const auto& p = pi_.values();
  auto state_for = [&](double c) {
    std::vector<double> v(p.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::max(0.0, c - 0.5 * phi_[i]);
    return v;
  };
  auto mass_for = [&](double c) {
    const auto v = state_for(c);
    return simd::weighted_dot(weights_, p, v);
  };
  // Fully supported case in closed form: c = 1 + int phi/2 d pi.
  const double c_full = 1.0 + 0.5 * simd::weighted_dot(weights_, p, phi_);
  const double phi_max = *std::max_element(phi_.begin(), phi_.end());
  if (c_full - 0.5 * phi_max >= 0.0) return GridDensity(grid_, state_for(c_full));
  double lo = 0.5 * *std::min_element(phi_.begin(), phi_.end());
  double hi = c_full;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (mass_for(mid) < 1.0 ? lo : hi) = mid;
  }
  return GridDensity(grid_, state_for(hi));
}

double PorousMediumFlow::energy(const GridDensity& rho_tilde) const {
  require_same_grid(rho_tilde.grid(), grid_);
  const auto& r = rho_tilde.values();
  std::vector<double> integrand(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) integrand[i] = r[i] * r[i] + phi_[i] * r[i];
  return simd::weighted_dot(weights_, pi_.values(), integrand);
}

double PorousMediumFlow::mass(const GridDensity& rho_tilde) const {
  require_same_grid(rho_tilde.grid(), grid_);
  return simd::weighted_dot(weights_, pi_.values(), rho_tilde.values());
}

GridDensity PorousMediumFlow::measure_from_rho_tilde(const GridDensity& rho_tilde) const {
  require_same_grid(rho_tilde.grid(), grid_);
  std::vector<double> v(rho_tilde.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = rho_tilde[i] * pi_[i];
  return GridDensity(grid_, std::move(v));
}

GridDensity PorousMediumFlow::rho_tilde_from_measure(const GridDensity& p) const {
  require_same_grid(p.grid(), grid_);
  std::vector<double> v(p.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = p[i] / pi_[i];
  return GridDensity(grid_, std::move(v));
}

FlowState step_fokker_planck(const FlowState& state, const BayesModel& model) {
  return KlFlow(model, state.density.grid()).step_fokker_planck(state);
}

FlowState step_weighted_laplacian(const FlowState& state, const BayesModel& model) {
  return KlFlow(model, state.density.grid()).step_weighted_laplacian(state);
}

FlowState step_porous_medium(const FlowState& state, const BayesModel& model) {
  return PorousMediumFlow(model, state.density.grid()).step(state);
}

// ---------------------------------------------------------------- W2 and decay

namespace {

std::vector<double> quantiles_1d(const GridDensity& nu, std::size_t count) {
  const Grid& g = nu.grid();
  require(g.dim == 1, ErrorKind::unsupported_dimension, "wasserstein_1d needs 1D densities");
  const auto& v = nu.values();
  const std::size_t n = v.size();
  std::vector<double> cdf(n, 0.0);
  for (std::size_t k = 1; k < n; ++k) cdf[k] = cdf[k - 1] + 0.5 * g.dx() * (v[k - 1] + v[k]);
  const double total = cdf.back();
  require(total > 0.0, ErrorKind::numeric_domain, "density has zero mass");
  std::vector<double> q(count);
  for (std::size_t j = 0; j < count; ++j) {
    const double s = (static_cast<double>(j) + 0.5) / static_cast<double>(count) * total;
    const auto it = std::lower_bound(cdf.begin() + 1, cdf.end(), s);
    const std::size_t k = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
        it - cdf.begin(), static_cast<std::ptrdiff_t>(n - 1)));
    const double width = cdf[k] - cdf[k - 1];
    const double frac = width > 0.0 ? std::clamp((s - cdf[k - 1]) / width, 0.0, 1.0) : 1.0;
    q[j] = g.x(static_cast<int>(k - 1)) + frac * g.dx();
  }
  return q;
}

}  // namespace

double wasserstein_1d(const GridDensity& nu1, const GridDensity& nu2) {
  constexpr std::size_t kCount = 2048;
  const auto q1 = quantiles_1d(nu1, kCount);
  const auto q2 = quantiles_1d(nu2, kCount);
  double acc = 0.0;
  for (std::size_t j = 0; j < kCount; ++j) acc += (q1[j] - q2[j]) * (q1[j] - q2[j]);
  return std::sqrt(acc / static_cast<double>(kCount));
}

double fit_log_rate(const std::vector<double>& times, const std::vector<double>& values,
                    double begin, double end) {
  double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < begin || times[i] > end) continue;
    if (!(values[i] > 0.0) || !std::isfinite(values[i])) continue;
    const double y = std::log(values[i]);
    st += times[i];
    sy += y;
    stt += times[i] * times[i];
    sty += times[i] * y;
    ++count;
  }
  if (count < 3)
    fail(ErrorKind::fit, "fewer than 3 positive samples in the fit window");
  const double nn = static_cast<double>(count);
  const double den = nn * stt - st * st;
  require(den > 0.0, ErrorKind::fit, "degenerate fit window");
  return (nn * sty - st * sy) / den;
}

namespace {

double measure_distance(const GridDensity& p, const GridDensity& target, Functional f) {
  switch (f) {
    case Functional::kl: return kl_divergence(p, target).value();
    case Functional::chi2: return chi2_divergence(p, target).value();
    case Functional::l2: return std::sqrt(chi2_divergence(p, target).value());
    case Functional::w2: return wasserstein_1d(p, target);
  }
  return 0.0;
}

}  // namespace

DecayCurve decay_curve(const BayesModel& model, const GridDensity& initial, FlowKind flow,
                       Functional functional, const DecayOptions& options) {
  require(options.t_end > 0.0 && options.record_every > 0.0, ErrorKind::input,
          "t_end and record_every must be positive");
  const Grid& grid = initial.grid();
  const GridDensity p0 = initial.normalized();
  DecayCurve curve;
  curve.window_begin = options.window_begin;
  curve.window_end = options.window_end > 0.0 ? options.window_end : options.t_end;
  const double eps = 1e-9 * options.record_every;

  if (flow == FlowKind::kl_fp) {
    const KlFlow kl(model, grid);
    FlowState s{0.0, kl.theta_from_lebesgue(p0), Representation::theta, options.dt, options.scheme};
    const auto every = std::max<long>(1, std::lround(options.record_every / options.dt));
    const auto total = std::lround(options.t_end / options.dt);
    for (long step = 0;; ++step) {
      if (step % every == 0) {
        curve.times.push_back(s.t);
        curve.values.push_back(measure_distance(kl.lebesgue_from_theta(s.density), kl.stationary(), functional));
      }
      if (step >= total) break;
      s = kl.step_fokker_planck(s);
      s.t = static_cast<double>(step + 1) * options.dt;
    }
  } else {
    const PorousMediumFlow pm(model, grid);
    const GridDensity target = pm.measure_from_rho_tilde(pm.stationary());
    FlowState s{0.0, pm.rho_tilde_from_measure(p0), Representation::rho_tilde, options.dt,
                Scheme::explicit_euler};
    double next_record = 0.0;
    while (true) {
      if (s.t >= next_record - eps) {
        curve.times.push_back(next_record);
        curve.values.push_back(measure_distance(pm.measure_from_rho_tilde(s.density), target, functional));
        next_record += options.record_every;
        if (next_record > options.t_end + eps) break;
      }
      s.dt = std::min(pm.stable_dt(s.density), next_record - s.t);
      if (!(s.dt > 0.0) || !std::isfinite(s.dt)) s.dt = next_record - s.t;
      s = pm.step(s);
    }
  }
  curve.fitted_rate = options.fit
                          ? fit_log_rate(curve.times, curve.values, curve.window_begin, curve.window_end)
                          : std::numeric_limits<double>::quiet_NaN();
  return curve;
}

void write_decay_curve(std::ostream& os, const DecayCurve& curve) {
  char buf[96];
  os << "t,value\n";
  for (std::size_t i = 0; i < curve.times.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", curve.times[i], curve.values[i]);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "# fitted_rate=%.17g window=[%.17g,%.17g]\n", curve.fitted_rate,
                curve.window_begin, curve.window_end);
  os << buf;
}

FlowKind parse_flow_kind(const std::string& s) {
  if (s == "kl_fp") return FlowKind::kl_fp;
  if (s == "chi2_pm") return FlowKind::chi2_pm;
  fail(ErrorKind::config, "unknown flow '" + s + "' (expected kl_fp or chi2_pm)");
}

Functional parse_functional(const std::string& s) {
  if (s == "kl") return Functional::kl;
  if (s == "chi2") return Functional::chi2;
  if (s == "l2") return Functional::l2;
  if (s == "w2") return Functional::w2;
  fail(ErrorKind::config, "unknown functional '" + s + "' (expected kl, chi2, l2 or w2)");
}

}  // namespace bayesflow

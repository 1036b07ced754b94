#include "bayesflow/variational.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

#include "bayesflow/error.hpp"
#include "bayesflow/simd.hpp"

namespace bayesflow {

namespace {

using GridKey = std::tuple<int, int, int, double, double, double, double>;

GridKey key_of(const Grid& g) { return {g.dim, g.nx, g.ny, g.xmin, g.xmax, g.ymin, g.ymax}; }

// exp(a_i - max a) normalized by quadrature; returns log of the normalizer.
double normalize_log_weights(const Grid& grid, const std::vector<double>& log_w,
                             std::vector<double>& out) {
  const double top = *std::max_element(log_w.begin(), log_w.end());
  require(std::isfinite(top), ErrorKind::numeric_domain, "log-density is not finite on the grid");
  out.resize(log_w.size());
  for (std::size_t i = 0; i < log_w.size(); ++i) out[i] = std::exp(log_w[i] - top);
  const double mass = simd::weighted_sum(grid.weights(), out);
  for (double& v : out) v /= mass;
  return top + std::log(mass);
}

}  // namespace

struct BayesModel::Cache {
  std::mutex mutex;
  std::map<GridKey, double> log_z;
};

BayesModel::BayesModel(PotentialField prior, PotentialField likelihood, MetricField metric,
                       Box domain)
    : prior_(std::move(prior)), likelihood_(std::move(likelihood)), metric_(std::move(metric)),
      domain_(std::move(domain)), cache_(std::make_shared<Cache>()) {
  domain_.validate();
  require(prior_.dim() == metric_.dim() && likelihood_.dim() == metric_.dim() &&
              domain_.dim() == metric_.dim(),
          ErrorKind::input, "model components have inconsistent dimensions");
}

std::vector<double> BayesModel::prior_values(const Grid& grid) const {
  require(grid.dim == dim(), ErrorKind::grid_mismatch, "grid dimension differs from model");
  std::vector<double> v(grid.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = prior_.value(grid.node(i));
  return v;
}

std::vector<double> BayesModel::likelihood_values(const Grid& grid) const {
  require(grid.dim == dim(), ErrorKind::grid_mismatch, "grid dimension differs from model");
  std::vector<double> v(grid.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = likelihood_.value(grid.node(i));
  return v;
}

std::vector<double> BayesModel::log_volume_values(const Grid& grid) const {
  require(grid.dim == dim(), ErrorKind::grid_mismatch, "grid dimension differs from model");
  std::vector<double> v(grid.size(), 0.0);
  if (metric_.is_constant()) {
    const double c = 0.5 * std::log(metric_(grid.node(0)).determinant());
    std::fill(v.begin(), v.end(), c);
    return v;
  }
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = 0.5 * std::log(metric_(grid.node(i)).determinant());
  return v;
}

GridDensity BayesModel::prior_density(const Grid& grid) const {
  const auto psi = prior_values(grid);
  const auto lv = log_volume_values(grid);
  std::vector<double> lw(psi.size());
  for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = -psi[i] + lv[i];
  std::vector<double> out;
  normalize_log_weights(grid, lw, out);
  return GridDensity(grid, std::move(out));
}

GridDensity BayesModel::posterior_density(const Grid& grid) const {
  const auto psi = prior_values(grid);
  const auto phi = likelihood_values(grid);
  const auto lv = log_volume_values(grid);
  std::vector<double> lw(psi.size());
  for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = -psi[i] - phi[i] + lv[i];
  std::vector<double> out;
  normalize_log_weights(grid, lw, out);
  return GridDensity(grid, std::move(out));
}

double BayesModel::log_Z(const Grid& grid) const {
  const GridKey key = key_of(grid);
  {
    std::lock_guard lock(cache_->mutex);
    if (auto it = cache_->log_z.find(key); it != cache_->log_z.end()) return it->second;
  }
  const auto psi = prior_values(grid);
  const auto phi = likelihood_values(grid);
  const auto lv = log_volume_values(grid);
  std::vector<double> prior_w(psi.size()), post_w(psi.size()), scratch;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    prior_w[i] = -psi[i] + lv[i];
    post_w[i] = prior_w[i] - phi[i];
  }
  const double log_prior_norm = normalize_log_weights(grid, prior_w, scratch);
  const double log_post_norm = normalize_log_weights(grid, post_w, scratch);
  const double value = log_post_norm - log_prior_norm;
  require(std::isfinite(value), ErrorKind::numeric_domain, "log Z is not finite");
  std::lock_guard lock(cache_->mutex);
  cache_->log_z.emplace(key, value);
  return value;
}

void BayesModel::validate_boundary_decay(const Grid& grid) const {
  if (bounded_domain_) return;
  const GridDensity mu = posterior_density(grid);
  const double top = *std::max_element(mu.values().begin(), mu.values().end());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const int ix = static_cast<int>(i % static_cast<std::size_t>(grid.nx));
    const int iy = static_cast<int>(i / static_cast<std::size_t>(grid.nx));
    const bool edge = ix == 0 || ix == grid.nx - 1 ||
                      (grid.dim == 2 && (iy == 0 || iy == grid.ny - 1));
    if (edge && mu[i] > 1e-12 * top)
      fail(ErrorKind::invalid_domain,
           "box too small: posterior at boundary node " + std::to_string(i) + " is " +
               std::to_string(mu[i] / top) + " of its maximum");
  }
}

// ---------------------------------------------------------------- divergences

namespace {

constexpr double kSupportTol = 1e-12;

template <class Integrand>
ExtReal divergence(const GridDensity& nu1, const GridDensity& nu2, Integrand integrand) {
  require_same_grid(nu1.grid(), nu2.grid());
  const auto w = nu1.grid().weights();
  std::vector<double> vals(nu1.size(), 0.0);
  std::vector<double> stray(nu1.size(), 0.0);
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double a = nu1[i];
    const double b = nu2[i];
    if (b > 0.0)
      vals[i] = integrand(a, b);
    else
      stray[i] = a;
  }
  if (simd::weighted_sum(w, stray) > kSupportTol) return ExtReal::infinity();
  return ExtReal(simd::weighted_sum(w, vals));
}

}  // namespace

ExtReal kl_divergence(const GridDensity& nu1, const GridDensity& nu2) {
  return divergence(nu1, nu2, [](double a, double b) { return a > 0.0 ? a * std::log(a / b) : 0.0; });
}

ExtReal chi2_divergence(const GridDensity& nu1, const GridDensity& nu2) {
  return divergence(nu1, nu2, [](double a, double b) {
    const double r = a / b - 1.0;
    return r * r * b;
  });
}

ExtReal j_kl(const GridDensity& nu, const BayesModel& model) {
  const GridDensity pi = model.prior_density(nu.grid());
  const ExtReal kl = kl_divergence(nu, pi);
  if (kl.is_infinite()) return kl;
  const auto phi = model.likelihood_values(nu.grid());
  return kl + simd::weighted_dot(nu.grid().weights(), nu.values(), phi);
}

ExtReal j_chi2(const GridDensity& nu, const BayesModel& model) {
  const GridDensity pi = model.prior_density(nu.grid());
  const ExtReal chi = chi2_divergence(nu, pi);
  if (chi.is_infinite()) return chi;
  const auto phi = model.likelihood_values(nu.grid());
  std::vector<double> g(phi.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (nu[i] == 0.0) continue;
    g[i] = std::expm1(phi[i]);
    if (!std::isfinite(g[i])) return ExtReal::infinity();
  }
  return chi + simd::weighted_dot(nu.grid().weights(), nu.values(), g);
}

// ---------------------------------------------------------------- Dirichlet

double dirichlet_energy(const std::vector<double>& f, const GridDensity& mu,
                        const MetricField& metric) {
  const Grid& grid = mu.grid();
  require(f.size() == grid.size(), ErrorKind::grid_mismatch, "function and density grids differ");
  require(metric.dim() == grid.dim, ErrorKind::grid_mismatch, "metric dimension differs from grid");
  for (double v : f) require(std::isfinite(v), ErrorKind::input, "function is not finite");

  auto partial = [&](int ix, int iy, int axis) {
    const int n = axis == 0 ? grid.nx : grid.ny;
    const int i = axis == 0 ? ix : iy;
    const double h = axis == 0 ? grid.dx() : grid.dy();
    auto at = [&](int k) { return axis == 0 ? f[grid.index(k, iy)] : f[grid.index(ix, k)]; };
    if (i == 0) return (at(1) - at(0)) / h;
    if (i == n - 1) return (at(n - 1) - at(n - 2)) / h;
    return (at(i + 1) - at(i - 1)) / (2.0 * h);
  };

  std::vector<double> q(grid.size());
  const bool constant = metric.is_constant();
  const Matrix ginv_const = constant ? Matrix(metric(grid.node(0)).inverse()) : Matrix();
  for (int iy = 0; iy < grid.ny; ++iy)
    for (int ix = 0; ix < grid.nx; ++ix) {
      const std::size_t idx = grid.index(ix, iy);
      Vector grad(grid.dim);
      grad[0] = partial(ix, iy, 0);
      if (grid.dim == 2) grad[1] = partial(ix, iy, 1);
      const Matrix ginv = constant ? ginv_const : Matrix(metric(grid.node(idx)).inverse());
      q[idx] = grad.dot(ginv * grad);
    }
  return simd::weighted_dot(grid.weights(), mu.values(), q);
}

// ---------------------------------------------------------------- convexity

ConvexityReport kl_convexity_constant(const BayesModel& model, const Box& domain,
                                      const Sampler& sampler) {
  PotentialField f = model.total_potential();
  if (!model.metric().is_constant()) f = f + log_sqrt_det(model.metric()).scaled(-1.0);
  return lambda_G(f, model.metric(), domain, sampler);
}

Chi2ConvexityResult chi2_convexity_check(const BayesModel& model, const Box& domain,
                                         const Sampler& sampler) {
  const MetricField& metric = model.metric();
  const PotentialField& psi = model.prior();
  const PotentialField& phi = model.likelihood();
  const double m = metric.dim();

  Chi2ConvexityResult out;
  out.prior_report = min_metric_eigenvalue(metric, domain, sampler, [&](const Vector& x) {
    const Vector grad = psi.gradient(x);
    Matrix q = hess_g(psi, metric, x) + grad * grad.transpose() / (m + 1.0);
    if (!metric.is_constant()) q += curvature_matrices(metric, x).r;
    return q;
  });
  out.margin = out.prior_report.lambda;
  out.condition1 = out.margin >= 0.0;
  out.likelihood_report = min_metric_eigenvalue(
      metric, domain, sampler, [&](const Vector& x) { return hess_g(phi, metric, x); });
  out.lambda = out.likelihood_report.lambda;
  return out;
}

}  // namespace bayesflow

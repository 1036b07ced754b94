#include "bayesflow/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include "json.hpp"
#include <ostream>

#include "bayesflow/error.hpp"
#include "bayesflow/parallel.hpp"
#include "bayesflow/simd.hpp"

namespace bayesflow {

ParticleEnsemble::ParticleEnsemble(int d, std::vector<double> pos, std::uint64_t seed)
    : dim(d), positions(std::move(pos)), rng_seed(seed) {
  validate();
}

ParticleEnsemble ParticleEnsemble::filled(std::size_t count, const Vector& x, std::uint64_t seed) {
  const auto d = static_cast<std::size_t>(x.size());
  std::vector<double> pos(count * d);
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t k = 0; k < d; ++k) pos[i * d + k] = x[static_cast<Eigen::Index>(k)];
  return ParticleEnsemble(static_cast<int>(d), std::move(pos), seed);
}

Vector ParticleEnsemble::particle(std::size_t i) const {
  Vector x(dim);
  for (int k = 0; k < dim; ++k) x[k] = at(i, k);
  return x;
}

void ParticleEnsemble::validate() const {
  require(dim >= 1, ErrorKind::input, "ensemble dimension must be positive");
  require(!positions.empty() && positions.size() % static_cast<std::size_t>(dim) == 0,
          ErrorKind::input, "ensemble needs at least one particle and N x m positions");
  for (std::size_t i = 0; i < positions.size(); ++i)
    require(std::isfinite(positions[i]), ErrorKind::divergence,
            "particle " + std::to_string(i / static_cast<std::size_t>(dim)) +
                " has a non-finite position");
}

ParticleEnsemble sample_density_1d(const GridDensity& density, std::size_t count,
                                   std::uint64_t seed, std::uint64_t stream) {
  const Grid& g = density.grid();
  require(g.dim == 1, ErrorKind::unsupported_dimension, "inverse-CDF sampling needs a 1D density");
  require(count >= 1, ErrorKind::input, "sample count must be positive");
  const auto& p = density.values();
  const std::size_t n = p.size();
  const double h = g.dx();
  std::vector<double> cdf(n, 0.0);
  for (std::size_t k = 1; k < n; ++k) cdf[k] = cdf[k - 1] + 0.5 * h * (p[k - 1] + p[k]);
  const double total = cdf.back();
  require(total > 0.0, ErrorKind::numeric_domain, "density has zero mass");
  const CounterRng rng(seed);
  std::vector<double> pos(count);
  parallel_for(count, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const double s = rng.uniform(stream, i, 0) * total;
      const auto it = std::lower_bound(cdf.begin() + 1, cdf.end(), s);
      const std::size_t k = static_cast<std::size_t>(
          std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(n - 1)));
      const double p0 = p[k - 1], p1 = p[k];
      const double r = std::clamp(s - cdf[k - 1], 0.0, cdf[k] - cdf[k - 1]);
      double x;
      const double slope = (p1 - p0) / h;
      if (std::abs(slope) * h < 1e-12 * std::max(p0, p1)) {
        x = p0 > 0.0 ? r / p0 : 0.5 * h;
      } else {
        // p0 x + slope x^2 / 2 = r
        x = 2.0 * r / (p0 + std::sqrt(std::max(0.0, p0 * p0 + 2.0 * slope * r)));
      }
      pos[i] = g.x(static_cast<int>(k - 1)) + std::clamp(x, 0.0, h);
    }
  });
  return ParticleEnsemble(1, std::move(pos), seed);
}

namespace {

struct ConstantMetric {
  Matrix inverse;
  Matrix inverse_sqrt;
};

ConstantMetric constant_metric(const BayesModel& model, const char* what) {
  if (!model.metric().is_constant())
    fail(ErrorKind::unsupported_dimension,
         std::string(what) + " supports constant metrics only");
  const Matrix g = model.metric()(Vector::Zero(model.dim()));
  return {g.inverse(), inverse_sqrt_spd(g)};
}

std::string position_text(const Vector& x) {
  std::string s = "(";
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    if (k) s += ", ";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x[k]);
    s += buf;
  }
  return s + ")";
}

// Shared Euler-Maruyama kernel: rho_at(i, x) gives the diffusion factor of
// particle i (1 for plain Langevin).
template <class RhoAt>
ParticleEnsemble em_step(const ParticleEnsemble& ensemble, const BayesModel& model, double dt,
                         const ConstantMetric& cm, RhoAt rho_at) {
  require(std::isfinite(dt) && dt > 0.0, ErrorKind::input, "dt must be positive");
  require(ensemble.dim == model.dim(), ErrorKind::input, "ensemble and model dimensions differ");
  const auto m = static_cast<std::size_t>(ensemble.dim);
  const std::size_t count = ensemble.size();
  std::vector<double> drift(count * m), noise(count * m), scale(count * m);
  const CounterRng rng(ensemble.rng_seed);
  parallel_for(count, [&](std::size_t begin, std::size_t end) {
    std::vector<double> xi(m);
    for (std::size_t i = begin; i < end; ++i) {
      const Vector x = ensemble.particle(i);
      const double r = rho_at(i, x);
      Vector prior_part, lik_part;
      try {
        prior_part = cm.inverse * model.prior().gradient(x);
        lik_part = cm.inverse * model.likelihood().gradient(x);
      } catch (const Error& e) {
        fail(ErrorKind::divergence, "drift failed at particle " + std::to_string(i) + ", position " +
                                        position_text(x) + ": " + e.what());
      }
      rng.normals(i, ensemble.step_count, xi);
      const Vector z = cm.inverse_sqrt * Eigen::Map<const Vector>(xi.data(), static_cast<Eigen::Index>(m));
      const double s = std::sqrt(2.0 * dt * r);
      for (std::size_t k = 0; k < m; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        const double d = r * prior_part[kk] + lik_part[kk];
        if (!std::isfinite(d))
          fail(ErrorKind::divergence, "non-finite drift at particle " + std::to_string(i) +
                                          ", position " + position_text(x));
        drift[i * m + k] = d;
        noise[i * m + k] = z[kk];
        scale[i * m + k] = s;
      }
    }
  });
  ParticleEnsemble out = ensemble;
  simd::kernels().em_update(out.positions.data(), drift.data(), noise.data(), scale.data(), dt,
                            out.positions.size());
  out.t = ensemble.t + dt;
  out.step_count = ensemble.step_count + 1;
  for (std::size_t i = 0; i < out.positions.size(); ++i)
    if (!std::isfinite(out.positions[i]))
      fail(ErrorKind::divergence, "particle " + std::to_string(i / m) + " left every finite bound");
  return out;
}

}  // namespace

ParticleEnsemble langevin_step(const ParticleEnsemble& ensemble, const BayesModel& model,
                               double dt) {
  const ConstantMetric cm = constant_metric(model, "langevin_step");
  return em_step(ensemble, model, dt, cm, [](std::size_t, const Vector&) { return 1.0; });
}

void DensityHistory::push(double t, GridDensity rho_tilde) {
  require(snapshots_.empty() || t > snapshots_.back().first, ErrorKind::input,
          "density snapshots must have increasing times");
  if (!snapshots_.empty()) require_same_grid(snapshots_.front().second.grid(), rho_tilde.grid());
  snapshots_.emplace_back(t, std::move(rho_tilde));
}

const GridDensity& DensityHistory::nearest(double t) const {
  require(!snapshots_.empty(), ErrorKind::input, "density history is empty");
  const auto it = std::lower_bound(snapshots_.begin(), snapshots_.end(), t,
                                   [](const auto& s, double v) { return s.first < v; });
  if (it == snapshots_.begin()) return it->second;
  if (it == snapshots_.end()) return snapshots_.back().second;
  const auto prev = std::prev(it);
  return (t - prev->first <= it->first - t) ? prev->second : it->second;
}

double interpolate(const GridDensity& f, const Vector& x) {
  const Grid& g = f.grid();
  require(x.size() == g.dim, ErrorKind::input, "point dimension differs from grid");
  auto locate = [](double v, double lo, double hi, int n, double h, int& cell, double& frac) {
    if (!(v >= lo && v <= hi))
      fail(ErrorKind::out_of_domain, "point " + std::to_string(v) + " lies outside [" +
                                         std::to_string(lo) + ", " + std::to_string(hi) + "]");
    cell = std::min(static_cast<int>((v - lo) / h), n - 2);
    frac = std::clamp((v - lo) / h - cell, 0.0, 1.0);
  };
  int ix, iy = 0;
  double fx, fy = 0.0;
  locate(x[0], g.xmin, g.xmax, g.nx, g.dx(), ix, fx);
  double v;
  if (g.dim == 1) {
    v = (1.0 - fx) * f[g.index(ix)] + fx * f[g.index(ix + 1)];
  } else {
    locate(x[1], g.ymin, g.ymax, g.ny, g.dy(), iy, fy);
    v = (1.0 - fy) * ((1.0 - fx) * f[g.index(ix, iy)] + fx * f[g.index(ix + 1, iy)]) +
        fy * ((1.0 - fx) * f[g.index(ix, iy + 1)] + fx * f[g.index(ix + 1, iy + 1)]);
  }
  return std::max(0.0, v);
}

double DensityHistory::value(double t, const Vector& x) const { return interpolate(nearest(t), x); }

ParticleEnsemble chi2_step(const ParticleEnsemble& ensemble, const BayesModel& model,
                           const DensityHistory& rho_tilde, double dt, OutOfDomain policy) {
  const ConstantMetric cm = constant_metric(model, "chi2_step");
  require(!rho_tilde.empty(), ErrorKind::input, "chi2_step needs at least one density snapshot");
  const GridDensity& snap = rho_tilde.nearest(ensemble.t);
  require(snap.grid().dim == ensemble.dim, ErrorKind::unsupported_dimension,
          "density snapshots and ensemble have different dimensions");
  ParticleEnsemble out = em_step(ensemble, model, dt, cm, [&](std::size_t i, const Vector& x) {
    try {
      return interpolate(snap, x);
    } catch (const Error& e) {
      fail(ErrorKind::out_of_domain, "particle " + std::to_string(i) + ": " + e.what());
    }
  });
  const Box box = snap.grid().box();
  const auto m = static_cast<std::size_t>(out.dim);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < m; ++k) {
      double& v = out.positions[i * m + k];
      const double lo = box.lower[static_cast<Eigen::Index>(k)];
      const double hi = box.upper[static_cast<Eigen::Index>(k)];
      if (v >= lo && v <= hi) continue;
      if (policy == OutOfDomain::halt)
        fail(ErrorKind::out_of_domain, "particle " + std::to_string(i) + " left the density grid");
      while (v < lo || v > hi) v = v < lo ? 2.0 * lo - v : 2.0 * hi - v;
    }
  }
  return out;
}

double integrated_autocorrelation(const std::vector<double>& trace) {
  const std::size_t n = trace.size();
  require(n >= 4, ErrorKind::insufficient_samples, "autocorrelation needs at least 4 samples");
  double mean = 0.0;
  for (double v : trace) mean += v;
  mean /= static_cast<double>(n);
  auto autocov = [&](std::size_t lag) {
    double acc = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) acc += (trace[i] - mean) * (trace[i + lag] - mean);
    return acc / static_cast<double>(n);
  };
  const double c0 = autocov(0);
  if (!(c0 > 0.0)) return 1.0;
  double tau = -1.0;
  for (std::size_t k = 0; 2 * k + 1 < n / 2; ++k) {
    const double pair = (autocov(2 * k) + autocov(2 * k + 1)) / c0;
    if (pair <= 0.0) break;
    tau += 2.0 * pair;
  }
  return std::max(tau, 1.0 / static_cast<double>(n));
}

EnsembleStats ensemble_stats(const ParticleEnsemble& ensemble, const Grid& bins,
                             const std::vector<double>& trace) {
  const std::size_t count = ensemble.size();
  require(count >= 2, ErrorKind::insufficient_samples, "ensemble statistics need N >= 2");
  require(bins.dim == ensemble.dim, ErrorKind::grid_mismatch, "histogram grid dimension differs");
  bins.validate();
  const int m = ensemble.dim;
  EnsembleStats s;
  s.mean = Vector::Zero(m);
  for (std::size_t i = 0; i < count; ++i) s.mean += ensemble.particle(i);
  s.mean /= static_cast<double>(count);
  // One correction pass so that identical particles give their exact position.
  Vector correction = Vector::Zero(m);
  for (std::size_t i = 0; i < count; ++i) correction += ensemble.particle(i) - s.mean;
  s.mean += correction / static_cast<double>(count);
  s.covariance = Matrix::Zero(m, m);
  for (std::size_t i = 0; i < count; ++i) {
    const Vector d = ensemble.particle(i) - s.mean;
    s.covariance += d * d.transpose();
  }
  s.covariance /= static_cast<double>(count - 1);
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose()).eval();

  std::vector<double> counts(bins.size(), 0.0);
  std::size_t inside = 0;
  auto node_of = [](double v, double lo, double hi, double h, int n) {
    if (!(v >= lo && v <= hi)) return -1;
    return std::clamp(static_cast<int>(std::lround((v - lo) / h)), 0, n - 1);
  };
  for (std::size_t i = 0; i < count; ++i) {
    const int ix = node_of(ensemble.at(i, 0), bins.xmin, bins.xmax, bins.dx(), bins.nx);
    const int iy = m == 2 ? node_of(ensemble.at(i, 1), bins.ymin, bins.ymax, bins.dy(), bins.ny) : 0;
    if (ix < 0 || iy < 0) continue;
    counts[bins.index(ix, iy)] += 1.0;
    ++inside;
  }
  require(inside > 0, ErrorKind::insufficient_samples, "no particle falls inside the histogram grid");
  const auto w = bins.weights();
  for (std::size_t i = 0; i < counts.size(); ++i)
    counts[i] = counts[i] / (static_cast<double>(inside) * w[i]);
  s.histogram = GridDensity(bins, std::move(counts));
  s.ess_proxy = trace.empty() ? static_cast<double>(count)
                              : static_cast<double>(trace.size()) / integrated_autocorrelation(trace);
  return s;
}

void write_trace_header(std::ostream& os, int dim) {
  os << "t,particle_id,x1";
  if (dim == 2) os << ",x2";
  os << '\n';
}

void write_trace_rows(std::ostream& os, const ParticleEnsemble& ensemble, std::size_t thin) {
  thin = std::max<std::size_t>(thin, 1);
  char buf[64];
  for (std::size_t i = 0; i < ensemble.size(); i += thin) {
    std::snprintf(buf, sizeof buf, "%.17g,%zu", ensemble.t, i);
    os << buf;
    for (int k = 0; k < ensemble.dim; ++k) {
      std::snprintf(buf, sizeof buf, ",%.17g", ensemble.at(i, k));
      os << buf;
    }
    os << '\n';
  }
}

std::string stats_json(double t, const EnsembleStats& stats) {
  nlohmann::json j;
  j["t"] = t;
  j["mean"] = std::vector<double>(stats.mean.data(), stats.mean.data() + stats.mean.size());
  nlohmann::json cov = nlohmann::json::array();
  for (Eigen::Index r = 0; r < stats.covariance.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(stats.covariance.cols()));
    for (Eigen::Index c = 0; c < stats.covariance.cols(); ++c)
      row[static_cast<std::size_t>(c)] = stats.covariance(r, c);
    cov.push_back(row);
  }
  j["cov"] = cov;
  j["ess_proxy"] = stats.ess_proxy;
  return j.dump();
}

}  // namespace bayesflow

#include "bayesflow/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "bayesflow/catalog.hpp"
#include "bayesflow/error.hpp"
#include "bayesflow/graph_ssl.hpp"
#include "bayesflow/pde_flows.hpp"
#include "bayesflow/samplers.hpp"
#include "bayesflow/spectral.hpp"

namespace bayesflow {

// ------------------------------------------------------------------ hashing

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  require(ctx != nullptr, ErrorKind::input, "cannot allocate a digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, data.data(), data.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  require(ok, ErrorKind::input, "SHA-256 computation failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::input, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json j;
  j["experiment"] = experiment;
  j["schema_version"] = kSchemaVersion;
  j["config"] = config.values();
  j["scalars"] = scalars;
  j["tables"] = tables;
  nlohmann::json files = nlohmann::json::array();
  for (const auto& m : manifest) files.push_back({{"path", m.path}, {"sha256", m.sha256}});
  j["manifest"] = files;
  j["wall_time_s"] = wall_time_s;
  return j;
}

// ------------------------------------------------------------ model building

namespace {

Box parse_box(const ExperimentConfig& cfg, int dim) {
  const auto v = cfg.get_doubles("model.box");
  if (v.size() == 2) return Box::cube(dim, v[0], v[1]);
  if (v.size() == static_cast<std::size_t>(2 * dim)) {
    Vector lo(dim), hi(dim);
    for (int k = 0; k < dim; ++k) {
      lo[k] = v[static_cast<std::size_t>(2 * k)];
      hi[k] = v[static_cast<std::size_t>(2 * k + 1)];
    }
    return Box(lo, hi);
  }
  fail(ErrorKind::config, "model.box: expected lo,hi or one lo,hi pair per axis");
}

}  // namespace

MetricField make_candidate_metric(const std::string& spec, const PotentialField& target, int dim) {
  const catalog::Spec s = catalog::parse_spec(spec);
  if (s.name == "sigma_inverse") {
    const double a = s.empty() ? 1.0 : s.scalar();
    require(a > 0.0, ErrorKind::config, "sigma_inverse: scale must be positive");
    const Matrix h = target.hessian(Vector::Zero(target.dim()));
    return MetricField::constant(a * 0.5 * (h + h.transpose()));
  }
  return catalog::make_metric(s, dim);
}

BayesModel make_model(const ExperimentConfig& cfg) {
  int dim = static_cast<int>(cfg.get_int("model.dim", 1));
  PotentialField prior = PotentialField::zero(1);
  PotentialField likelihood = PotentialField::zero(1);
  bool bounded = false;
  if (cfg.has("model.name")) {
    const catalog::Spec s = catalog::parse_spec(cfg.get("model.name"));
    if (s.name == "ou") {
      const double s2 = s.empty() ? 1.0 : s.scalar();
      require(s2 > 0.0, ErrorKind::config, "model.name: ou variance must be positive");
      dim = 1;
      prior = PotentialField::quadratic(Matrix::Constant(1, 1, 1.0 / s2));
    } else if (s.name == "gauss") {
      const Matrix sigma = s.matrix();
      dim = static_cast<int>(sigma.rows());
      prior = catalog::gauss_quadratic(sigma, Vector::Zero(dim));
    } else if (s.name == "double_well") {
      prior = catalog::double_well(dim);
    } else if (s.name == "flat") {
      prior = PotentialField::zero(dim);
      bounded = true;
    } else if (s.name == "flat_quadratic") {
      const double a = s.empty() ? 1.0 : s.scalar();
      prior = PotentialField::zero(dim);
      likelihood = PotentialField::quadratic(2.0 * a * Matrix::Identity(dim, dim));
      bounded = true;
    } else {
      fail(ErrorKind::config, "model.name: unknown catalog model '" + s.name + "'");
    }
    if (likelihood.dim() != dim) likelihood = PotentialField::zero(dim);
  } else {
    prior = catalog::make_potential(catalog::parse_spec(cfg.get("model.prior", "zero")), dim);
    dim = prior.dim();
    likelihood = catalog::make_potential(catalog::parse_spec(cfg.get("model.likelihood", "zero")), dim);
  }
  const MetricField metric = make_candidate_metric(cfg.get("model.metric", "euclidean"), prior + likelihood, dim);
  BayesModel model(prior, likelihood, metric, parse_box(cfg, dim));
  model.set_bounded_domain(cfg.get_bool("model.bounded", bounded));
  return model;
}

Grid make_grid(const ExperimentConfig& cfg, const BayesModel& model) {
  const double dx = cfg.get_double("numerics.dx");
  require(dx > 0.0, ErrorKind::config, "numerics.dx: must be positive");
  const Box& b = model.domain();
  if (model.dim() == 1) return Grid::line_spacing(b.lower[0], b.upper[0], dx);
  require(model.dim() == 2, ErrorKind::config, "model.dim: grid experiments support 1D and 2D models");
  const double dy = cfg.get_double("numerics.dy", dx);
  require(dy > 0.0, ErrorKind::config, "numerics.dy: must be positive");
  const int nx = static_cast<int>(std::lround((b.upper[0] - b.lower[0]) / dx)) + 1;
  const int ny = static_cast<int>(std::lround((b.upper[1] - b.lower[1]) / dy)) + 1;
  return Grid::plane(b.lower[0], b.upper[0], nx, b.lower[1], b.upper[1], ny);
}

std::vector<MetricRankRow> metric_rank(const std::vector<MetricCandidate>& candidates,
                                       const PotentialField& target, const Box& box,
                                       const Sampler& sampler) {
  std::vector<MetricRankRow> rows;
  for (const auto& c : candidates) {
    require(c.metric.is_constant(), ErrorKind::config,
            "metric_rank: candidate '" + c.label + "' is not a constant metric");
    MetricRankRow r;
    r.label = c.label;
    r.lambda = lambda_G(target, c.metric, box, sampler).lambda;
    r.lipschitz = drift_lipschitz(target, c.metric, box, sampler);
    r.feasible = r.lipschitz <= 1.0 + 1e-6;
    rows.push_back(r);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const MetricRankRow& a, const MetricRankRow& b) {
    if (a.feasible != b.feasible) return a.feasible;
    return a.lambda > b.lambda;
  });
  return rows;
}

// --------------------------------------------------------------- experiments

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class Outputs {
 public:
  Outputs(std::filesystem::path dir, ExperimentReport& report) : dir_(std::move(dir)), report_(report) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    require(!ec, ErrorKind::config, "output: cannot create directory " + dir_.string());
  }

  void write(const std::string& name, const std::string& content) {
    std::ofstream out(dir_ / name, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::config, "output: cannot write " + (dir_ / name).string());
    out << content;
    report_.manifest.push_back({name, sha256_hex(content)});
  }

 private:
  std::filesystem::path dir_;
  ExperimentReport& report_;
};

std::vector<std::pair<std::string, std::string>> parse_candidates(const ExperimentConfig& cfg,
                                                                  const std::string& key) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream ss(cfg.get(key));
  std::string item;
  while (ss >> item) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == item.size())
      fail(ErrorKind::config, key + ": entry '" + item + "' is not label=spec");
    out.emplace_back(item.substr(0, eq), item.substr(eq + 1));
  }
  if (out.empty()) fail(ErrorKind::config, key + ": no candidate metrics listed");
  return out;
}

Sampler make_sampler(const ExperimentConfig& cfg) {
  const long n = cfg.get_int("numerics.samples", 9);
  require(n >= 1, ErrorKind::config, "numerics.samples: must be positive");
  return Sampler::grid(static_cast<int>(n));
}

PotentialField target_potential(const ExperimentConfig& cfg, const BayesModel& model) {
  PotentialField f = model.total_potential();
  const std::string mode = cfg.get("numerics.derivatives", "analytic");
  if (mode == "finite_difference") return f.finite_difference();
  require(mode == "analytic", ErrorKind::config, "numerics.derivatives: expected analytic or finite_difference");
  return f;
}

std::vector<MetricCandidate> candidates_of(const ExperimentConfig& cfg, const std::string& key,
                                           const PotentialField& target, int dim) {
  std::vector<MetricCandidate> out;
  const std::string mode = cfg.get("numerics.derivatives", "analytic");
  for (const auto& [label, spec] : parse_candidates(cfg, key)) {
    MetricField m = make_candidate_metric(spec, target, dim);
    require(m.dim() == dim, ErrorKind::config, key + ": metric '" + spec + "' has the wrong dimension");
    if (mode == "finite_difference") m = m.finite_difference();
    out.push_back({label, m});
  }
  return out;
}

void run_lambda_g(const ExperimentConfig& cfg, ExperimentReport& rep, Outputs& out) {
  const BayesModel model = make_model(cfg);
  const PotentialField f = target_potential(cfg, model);
  const Sampler sampler = make_sampler(cfg);
  std::string csv = "metric,lambda_g,lipschitz,argmin\n";
  for (const auto& c : candidates_of(cfg, "lambda_g.metrics", f, model.dim())) {
    const ConvexityReport r = lambda_G(f, c.metric, model.domain(), sampler);
    const double lip = drift_lipschitz(f, c.metric, model.domain(), sampler);
    rep.scalars["lambda_" + c.label] = r.lambda;
    rep.scalars["lip_" + c.label] = lip;
    std::string at;
    for (Eigen::Index k = 0; k < r.argmin_point.size(); ++k) at += (k ? " " : "") + fmt(r.argmin_point[k]);
    csv += c.label + "," + fmt(r.lambda) + "," + fmt(lip) + "," + at + "\n";
  }
  out.write("lambda_g.csv", csv);
}

void run_metric_rank(const ExperimentConfig& cfg, ExperimentReport& rep, Outputs& out) {
  const BayesModel model = make_model(cfg);
  const PotentialField f = target_potential(cfg, model);
  const auto rows = metric_rank(candidates_of(cfg, "metric_rank.metrics", f, model.dim()), f,
                                model.domain(), make_sampler(cfg));
  std::string csv = "rank,metric,lambda_g,lipschitz,feasible\n";
  nlohmann::json table = nlohmann::json::array();
  int feasible = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    csv += std::to_string(i + 1) + "," + r.label + "," + fmt(r.lambda) + "," + fmt(r.lipschitz) + "," +
           (r.feasible ? "true" : "false") + "\n";
    table.push_back({{"metric", r.label}, {"lambda_g", r.lambda}, {"lipschitz", r.lipschitz},
                     {"feasible", r.feasible}});
    rep.scalars["lambda_" + r.label] = r.lambda;
    rep.scalars["lip_" + r.label] = r.lipschitz;
    feasible += r.feasible ? 1 : 0;
  }
  rep.scalars["feasible_count"] = feasible;
  if (feasible > 0) rep.scalars["best_lambda"] = rows.front().lambda;
  rep.tables["ranking"] = table;
  out.write("metric_rank.csv", csv);
}

GridDensity initial_density(const std::string& spec_text, const BayesModel& model, const Grid& grid) {
  const catalog::Spec s = catalog::parse_spec(spec_text);
  if (s.name == "posterior") return model.posterior_density(grid);
  if (s.name == "prior") return model.prior_density(grid);
  if (s.name == "gauss") {
    const auto a = s.flat();
    require(a.size() == static_cast<std::size_t>(grid.dim) + 1, ErrorKind::config,
            "initial: gauss takes one mean per axis and a variance");
    const double var = a.back();
    require(var > 0.0, ErrorKind::config, "initial: gauss variance must be positive");
    return GridDensity::from_function(grid, [&](const Vector& x) {
             double r2 = 0.0;
             for (Eigen::Index k = 0; k < x.size(); ++k)
               r2 += (x[k] - a[static_cast<std::size_t>(k)]) * (x[k] - a[static_cast<std::size_t>(k)]);
             return std::exp(-0.5 * r2 / var);
           })
        .normalized();
  }
  if (s.name == "barenblatt") {
    require(grid.dim == 1, ErrorKind::config, "initial: barenblatt is 1D");
    const double t0 = s.scalar();
    require(t0 > 0.0, ErrorKind::config, "initial: barenblatt time must be positive");
    return GridDensity::from_function(grid, [&](const Vector& x) {
             const double c = std::pow(t0, 2.0 / 3.0);
             return std::pow(t0, -1.0 / 3.0) * std::max(0.0, 1.0 - x[0] * x[0] / (12.0 * c));
           })
        .normalized();
  }
  fail(ErrorKind::config, "initial: unknown density '" + s.name + "'");
}

Scheme parse_scheme(const std::string& s) {
  if (s == "semi_implicit") return Scheme::semi_implicit;
  if (s == "explicit") return Scheme::explicit_euler;
  fail(ErrorKind::config, "numerics.scheme: expected semi_implicit or explicit");
}

void run_flow_decay(const ExperimentConfig& cfg, ExperimentReport& rep, Outputs& out) {
  const BayesModel model = make_model(cfg);
  const Grid grid = make_grid(cfg, model);
  model.validate_boundary_decay(grid);
  const FlowKind flow = parse_flow_kind(cfg.get("flow.flow", "kl_fp"));
  const Functional functional = parse_functional(cfg.get("flow.functional", "kl"));
  DecayOptions opt;
  opt.t_end = cfg.get_double("numerics.t_end", 2.0);
  opt.record_every = cfg.get_double("numerics.record_every", 0.05);
  opt.dt = cfg.get_double("numerics.dt", 1e-3);
  opt.scheme = parse_scheme(cfg.get("numerics.scheme", "semi_implicit"));
  if (cfg.has("numerics.window")) {
    const auto w = cfg.get_doubles("numerics.window");
    require(w.size() == 2 && w[0] < w[1], ErrorKind::config, "numerics.window: expected a,b with a < b");
    opt.window_begin = w[0];
    opt.window_end = w[1];
  }
  const GridDensity p0 = initial_density(cfg.get("flow.initial"), model, grid);
  const DecayCurve curve = decay_curve(model, p0, flow, functional, opt);
  std::ostringstream csv;
  write_decay_curve(csv, curve);
  out.write("decay.csv", csv.str());
  rep.scalars["fitted_rate"] = curve.fitted_rate;
  rep.scalars["initial_value"] = curve.values.front();
  rep.scalars["final_value"] = curve.values.back();
}

std::uint64_t required_seed(const ExperimentConfig& cfg) {
  const auto s = cfg.seed();
  if (!s) fail(ErrorKind::config, "seed: required for stochastic experiments");
  return *s;
}

Grid histogram_grid(const ExperimentConfig& cfg, const BayesModel& model) {
  ExperimentConfig h = cfg;
  const double dx = cfg.get_double("numerics.dx");
  h.set("numerics.dx", fmt(cfg.get_double("numerics.hist_dx", 5.0 * dx)));
  if (cfg.has("numerics.dy") || model.dim() == 2)
    h.set("numerics.dy", fmt(cfg.get_double("numerics.hist_dx", 5.0 * cfg.get_double("numerics.dy", dx))));
  return make_grid(h, model);
}

ParticleEnsemble initial_ensemble(const ExperimentConfig& cfg, const BayesModel& model,
                                  std::uint64_t seed, std::size_t count) {
  const catalog::Spec s = catalog::parse_spec(cfg.get("sampler.initial", "posterior"));
  const int m = model.dim();
  if (s.name == "point") {
    const auto a = s.flat();
    require(a.size() == static_cast<std::size_t>(m), ErrorKind::config, "sampler.initial: point needs one value per axis");
    return ParticleEnsemble::filled(count, Eigen::Map<const Vector>(a.data(), m), seed);
  }
  if (s.name == "gauss") {
    const auto a = s.flat();
    require(a.size() == 2 && a[1] > 0.0, ErrorKind::config, "sampler.initial: gauss(mean, variance)");
    const CounterRng rng(seed);
    std::vector<double> pos(count * static_cast<std::size_t>(m));
    const double sd = std::sqrt(a[1]);
    for (std::size_t i = 0; i < count; ++i) {
      std::span<double> row(pos.data() + i * static_cast<std::size_t>(m), static_cast<std::size_t>(m));
      rng.normals(i, ~std::uint64_t{0}, row);
      for (double& v : row) v = a[0] + sd * v;
    }
    return ParticleEnsemble(m, std::move(pos), seed);
  }
  const Grid grid = make_grid(cfg, model);
  return sample_density_1d(initial_density(cfg.get("sampler.initial", "posterior"), model, grid), count,
                           seed, 0x5eed);
}

void run_langevin(const ExperimentConfig& cfg, ExperimentReport& rep, Outputs& out) {
  const BayesModel model = make_model(cfg);
  const std::uint64_t seed = required_seed(cfg);
  const long count = cfg.get_int("sampler.N", 1000);
  require(count >= 2, ErrorKind::config, "sampler.N: need at least 2 particles");
  const double dt = cfg.get_double("numerics.dt", 1e-3);
  const double t_end = cfg.get_double("numerics.t_end", 1.0);
  require(dt > 0.0 && t_end > 0.0, ErrorKind::config, "numerics.dt and numerics.t_end must be positive");
  const long steps = std::lround(t_end / dt);
  const long every = std::max(1L, std::lround(cfg.get_double("numerics.record_every", t_end) / dt));
  const long thin = cfg.get_int("sampler.trace_thin", 0);
  const Grid bins = histogram_grid(cfg, model);
  ParticleEnsemble ens = initial_ensemble(cfg, model, seed, static_cast<std::size_t>(count));
  std::vector<double> trace{ens.at(0, 0)};
  std::ostringstream stats_lines, trace_csv;
  if (thin > 0) write_trace_header(trace_csv, ens.dim);
  EnsembleStats last;
  for (long s = 0;; ++s) {
    if (s % every == 0 || s == steps) {
      last = ensemble_stats(ens, bins, trace.size() >= 4 ? trace : std::vector<double>{});
      stats_lines << stats_json(ens.t, last) << '\n';
      if (thin > 0) write_trace_rows(trace_csv, ens, static_cast<std::size_t>(thin));
    }
    if (s == steps) break;
    ens = langevin_step(ens, model, dt);
    trace.push_back(ens.at(0, 0));
  }
  out.write("stats.jsonl", stats_lines.str());
  if (thin > 0) out.write("trace.csv", trace_csv.str());
  std::ostringstream hist;
  write_density(hist, last.histogram);
  out.write("histogram.txt", hist.str());
  for (int k = 0; k < ens.dim; ++k) {
    rep.scalars["mean_" + std::to_string(k + 1)] = last.mean[k];
    rep.scalars["var_" + std::to_string(k + 1)] = last.covariance(k, k);
  }
  rep.scalars["ess_proxy"] = last.ess_proxy;
}

void run_chi2_sampler(const ExperimentConfig& cfg, ExperimentReport& rep, Outputs& out) {
  const BayesModel model = make_model(cfg);
  require(model.dim() == 1, ErrorKind::config, "sampler.kind: chi2 sampling supports 1D models");
  const std::uint64_t seed = required_seed(cfg);
  const long count = cfg.get_int("sampler.N", 1000);
  require(count >= 2, ErrorKind::config, "sampler.N: need at least 2 particles");
  const double dt = cfg.get_double("numerics.dt", 1e-3);
  const double t_end = cfg.get_double("numerics.t_end", 0.5);
  require(dt > 0.0 && t_end > 0.0, ErrorKind::config, "numerics.dt and numerics.t_end must be positive");
  const std::string policy_text = cfg.get("sampler.out_of_domain", "reflect");
  require(policy_text == "reflect" || policy_text == "halt", ErrorKind::config,
          "sampler.out_of_domain: expected reflect or halt");
  const OutOfDomain policy = policy_text == "reflect" ? OutOfDomain::reflect : OutOfDomain::halt;
  const Grid grid = make_grid(cfg, model);
  const PorousMediumFlow pm(model, grid);
  const GridDensity p0 = initial_density(cfg.get("sampler.initial"), model, grid);
  FlowState pde{0.0, pm.rho_tilde_from_measure(p0), Representation::rho_tilde, dt, Scheme::explicit_euler};
  DensityHistory history;
  history.push(0.0, pde.density);
  ParticleEnsemble ens = sample_density_1d(p0, static_cast<std::size_t>(count), seed, 0x5eed);
  const long steps = std::lround(t_end / dt);
  const double mass0 = pm.mass(pde.density);
  for (long s = 0; s < steps; ++s) {
    ens = chi2_step(ens, model, history, dt, policy);
    const double target = static_cast<double>(s + 1) * dt;
    while (pde.t < target - 1e-12 * dt) {
      pde.dt = std::min(pm.stable_dt(pde.density), target - pde.t);
      pde = pm.step(pde);
    }
    pde.t = target;
    history.push(target, pde.density);
    ens.t = target;
  }
  const Grid bins = histogram_grid(cfg, model);
  const EnsembleStats stats = ensemble_stats(ens, bins);
  const GridDensity measure = pm.measure_from_rho_tilde(pde.density);
  std::vector<double> coarse(bins.size());
  for (std::size_t i = 0; i < coarse.size(); ++i) coarse[i] = interpolate(measure, bins.node(i));
  const GridDensity pde_coarse = GridDensity(bins, std::move(coarse)).normalized();
  rep.scalars["l1_to_pde"] = l1_distance(stats.histogram, pde_coarse);
  rep.scalars["pde_mass_drift"] = pm.mass(pde.density) - mass0;
  rep.scalars["mean_1"] = stats.mean[0];
  rep.scalars["var_1"] = stats.covariance(0, 0);
  std::ostringstream a, b, c;
  write_density(a, stats.histogram);
  write_density(b, pde_coarse);
  c << stats_json(ens.t, stats) << '\n';
  out.write("histogram.txt", a.str());
  out.write("pde_density.txt", b.str());
  out.write("stats.jsonl", c.str());
}

void run_sampler(const ExperimentConfig& cfg, ExperimentReport& rep, Outputs& out) {
  const std::string kind = cfg.get("sampler.kind", "langevin");
  if (kind == "langevin") return run_langevin(cfg, rep, out);
  if (kind == "chi2") return run_chi2_sampler(cfg, rep, out);
  fail(ErrorKind::config, "sampler.kind: expected langevin or chi2");
}

void run_spectral(const ExperimentConfig& cfg, ExperimentReport& rep, Outputs& out) {
  const BayesModel model = make_model(cfg);
  const Grid grid = make_grid(cfg, model);
  const WeightedLaplacianOperator op = assemble_weighted_laplacian(model, grid);
  const std::string method = cfg.get("spectral.method", "inverse");
  SpectralResult r;
  if (method == "inverse") {
    r = spectral_gap(op);
  } else if (method == "dense") {
    r = dense_spectral_gap(op);
  } else {
    fail(ErrorKind::config, "spectral.method: expected inverse or dense");
  }
  rep.scalars["lambda2"] = r.lambda2;
  rep.scalars["residual"] = r.residual;
  rep.scalars["n_iter"] = r.n_iter;
  out.write("spectral.json", spectral_json(r) + "\n");
  std::ostringstream ef;
  write_grid_function(ef, grid, r.eigenfunction);
  out.write("eigenfunction.txt", ef.str());
}

Matrix builtin_graph(const catalog::Spec& s) {
  const auto a = s.flat();
  if (s.name == "path") {
    require(a.size() == 1 && a[0] >= 2, ErrorKind::config, "graph.source: path(n) with n >= 2");
    const auto n = static_cast<Eigen::Index>(a[0]);
    Matrix w = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i + 1 < n; ++i) w(i, i + 1) = w(i + 1, i) = 1.0;
    return w;
  }
  if (s.name == "circle") {
    require(a.size() == 2 && a[0] >= 2 && a[1] > 0.0, ErrorKind::config, "graph.source: circle(n, r)");
    const auto n = static_cast<Eigen::Index>(a[0]);
    Matrix p(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double th = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
      p(i, 0) = std::cos(th);
      p(i, 1) = std::sin(th);
    }
    return build_graph(p, hat_kernel, a[1]);
  }
  if (s.name == "two_clusters") {
    require(!a.empty() && a[0] >= 1, ErrorKind::config, "graph.source: two_clusters(k[, bridge])");
    const auto k = static_cast<Eigen::Index>(a[0]);
    const double bridge = a.size() > 1 ? a[1] : 0.1;
    Matrix w = Matrix::Zero(2 * k, 2 * k);
    for (Eigen::Index c = 0; c < 2; ++c)
      for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j)
          if (i != j) w(c * k + i, c * k + j) = 1.0;
    w(k - 1, k) = w(k, k - 1) = bridge;
    return w;
  }
  fail(ErrorKind::config, "graph.source: unknown graph '" + s.name + "'");
}

GraphModel make_graph_model(const ExperimentConfig& cfg) {
  const std::string source = cfg.get("graph.source");
  Matrix w;
  if (source == "edges") {
    std::ifstream in(cfg.get("graph.edges_file"));
    require(static_cast<bool>(in), ErrorKind::config, "graph.edges_file: cannot open file");
    w = read_edge_list(in, static_cast<int>(cfg.get_int("graph.nodes")));
  } else if (source == "points") {
    std::ifstream in(cfg.get("graph.points_file"));
    require(static_cast<bool>(in), ErrorKind::config, "graph.points_file: cannot open file");
    w = build_graph(read_points_csv(in), hat_kernel, cfg.get_double("graph.radius"));
  } else {
    w = builtin_graph(catalog::parse_spec(source));
  }
  std::vector<int> idx;
  std::vector<double> y;
  std::istringstream ls(cfg.get("graph.labels", ""));
  std::string item;
  while (ls >> item) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) fail(ErrorKind::config, "graph.labels: entry '" + item + "' is not j:y");
    try {
      idx.push_back(std::stoi(item.substr(0, colon)));
      y.push_back(std::stod(item.substr(colon + 1)));
    } catch (const std::exception&) {
      fail(ErrorKind::config, "graph.labels: entry '" + item + "' is not j:y");
    }
  }
  try {
    return GraphModel(w, cfg.get_double("graph.alpha", 1.0), idx, y,
                      parse_likelihood(cfg.get("graph.likelihood", "probit")),
                      cfg.get_double("graph.gamma", 1.0), cfg.get_double("graph.epsilon", 1.0));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::input) throw Error(ErrorKind::config, std::string("graph: ") + e.what());
    throw;
  }
}

void run_graph_ssl(const ExperimentConfig& cfg, ExperimentReport& rep, Outputs& out) {
  const GraphModel gm = make_graph_model(cfg);
  rep.scalars["lambda_min"] = gm.lambda_min();
  const LatentState map = map_estimate(gm, Vector::Zero(gm.n()));
  rep.scalars["map_objective"] = map.objective;
  rep.scalars["map_gradient_norm"] = map.gradient.norm();
  rep.scalars["map_iterations"] = map.iterations;
  std::ostringstream map_csv;
  write_vector_csv(map_csv, "u", map.u);
  out.write("map.csv", map_csv.str());
  const long steps = cfg.get_int("graph.steps", 0);
  if (steps <= 0) return;
  const std::uint64_t seed = required_seed(cfg);
  const double dt = cfg.get_double("graph.dt", 0.01);
  const long burn = cfg.get_int("graph.burn_in", steps / 10);
  const long thin = std::max(1L, cfg.get_int("graph.thin", 10));
  const CounterRng rng(seed);
  Vector x = map.u;
  std::vector<Vector> kept;
  Vector sum = Vector::Zero(gm.n());
  for (long s = 1; s <= steps; ++s) {
    x = precond_langevin_step(x, gm, dt, rng, 0, static_cast<std::uint64_t>(s));
    if (s > burn && (s - burn) % thin == 0) {
      kept.push_back(x);
      sum += x;
    }
  }
  require(!kept.empty(), ErrorKind::config, "graph.steps: no samples kept after burn-in");
  const LabelSummary summary = posterior_label_summary(kept);
  std::ostringstream labels_csv;
  write_label_summary_csv(labels_csv, summary);
  out.write("labels.csv", labels_csv.str());
  const Vector mean = sum / static_cast<double>(kept.size());
  for (int i = 0; i < gm.n(); ++i) {
    rep.scalars["prob_plus_" + std::to_string(i)] = summary.prob_plus[static_cast<std::size_t>(i)];
    rep.scalars["mean_u_" + std::to_string(i)] = mean[i];
  }
  std::vector<Vector> points{map.u};
  for (std::size_t i = 0; i < kept.size(); i += std::max<std::size_t>(1, kept.size() / 50)) points.push_back(kept[i]);
  rep.scalars["precond_lambda_g"] = precond_convexity(gm, points);
}

using Runner = void (*)(const ExperimentConfig&, ExperimentReport&, Outputs&);

Runner runner_for(const std::string& name) {
  if (name == "lambda_g") return run_lambda_g;
  if (name == "metric_rank") return run_metric_rank;
  if (name == "flow_decay") return run_flow_decay;
  if (name == "sampler") return run_sampler;
  if (name == "spectral") return run_spectral;
  if (name == "graph_ssl") return run_graph_ssl;
  fail(ErrorKind::config, "experiment: unknown experiment '" + name +
                              "' (expected lambda_g, flow_decay, sampler, spectral, graph_ssl or metric_rank)");
}

}  // namespace

void validate_experiment(const ExperimentConfig& cfg) {
  const std::string name = cfg.experiment();
  runner_for(name);
  if (name == "graph_ssl") {
    const GraphModel gm = make_graph_model(cfg);
    if (cfg.get_int("graph.steps", 0) > 0) required_seed(cfg);
    return;
  }
  const BayesModel model = make_model(cfg);
  if (name == "lambda_g" || name == "metric_rank") {
    candidates_of(cfg, name + ".metrics", target_potential(cfg, model), model.dim());
    make_sampler(cfg);
    return;
  }
  const Grid grid = make_grid(cfg, model);
  if (name == "flow_decay") {
    parse_flow_kind(cfg.get("flow.flow", "kl_fp"));
    parse_functional(cfg.get("flow.functional", "kl"));
    parse_scheme(cfg.get("numerics.scheme", "semi_implicit"));
    initial_density(cfg.get("flow.initial"), model, grid);
  } else if (name == "sampler") {
    required_seed(cfg);
    const std::string kind = cfg.get("sampler.kind", "langevin");
    require(kind == "langevin" || kind == "chi2", ErrorKind::config, "sampler.kind: expected langevin or chi2");
    if (kind == "chi2") initial_density(cfg.get("sampler.initial"), model, grid);
  }
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentReport rep;
  rep.experiment = cfg.experiment();
  rep.config = cfg;
  const Runner runner = runner_for(rep.experiment);
  Outputs out(out_dir, rep);
  try {
    runner(cfg, rep, out);
  } catch (const Error& e) {
    throw Error(e.kind(), "experiment " + rep.experiment + ": " + e.what());
  }
  rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ofstream report(out_dir / "report.json");
  require(static_cast<bool>(report), ErrorKind::config, "output: cannot write report.json");
  report << rep.to_json().dump(2) << '\n';
  return rep;
}

}  // namespace bayesflow

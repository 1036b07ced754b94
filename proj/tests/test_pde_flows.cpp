#include <cmath>
#include <numbers>
#include <sstream>

#include "bayesflow/catalog.hpp"
#include "bayesflow/error.hpp"
#include "bayesflow/pde_flows.hpp"
#include "doctest.h"

using namespace bayesflow;

namespace {

GridDensity gaussian(const Grid& g, double mean, double var) {
  return GridDensity::from_function(g, [=](const Vector& x) {
           return std::exp(-0.5 * (x[0] - mean) * (x[0] - mean) / var) / std::sqrt(2.0 * std::numbers::pi * var);
         })
      .normalized();
}

BayesModel ou_model(double s2, double lo, double hi) {
  return BayesModel(PotentialField::quadratic(Matrix::Constant(1, 1, 1.0 / s2)), PotentialField::zero(1),
                    catalog::euclidean(1), Box::cube(1, lo, hi));
}

BayesModel flat_model(double lo, double hi) {
  BayesModel m(PotentialField::zero(1), PotentialField::zero(1), catalog::euclidean(1), Box::cube(1, lo, hi));
  m.set_bounded_domain(true);
  return m;
}

double max_abs_diff(const GridDensity& a, const GridDensity& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_value(const GridDensity& a) { return *std::max_element(a.values().begin(), a.values().end()); }

// Closed-form mass-M solution of u_t = (u^2)_xx: t^{-1/3} (C - x^2 / (12 t^{2/3}))_+.
struct Barenblatt {
  double c;
  explicit Barenblatt(double mass) : c(std::pow(3.0 * mass / (4.0 * std::sqrt(12.0)), 2.0 / 3.0)) {}
  double radius(double t) const { return std::sqrt(12.0 * c) * std::cbrt(t); }
  double operator()(double x, double t) const {
    return std::max(0.0, c - x * x / (12.0 * std::pow(t, 2.0 / 3.0))) / std::cbrt(t);
  }
};

}  // namespace

TEST_CASE("log mean") {
  CHECK(log_mean_exp(0.3, 0.3) == doctest::Approx(std::exp(0.3)).epsilon(1e-15));
  CHECK(log_mean_exp(0.0, std::log(2.0)) == doctest::Approx(1.0 / std::log(2.0)).epsilon(1e-14));
  CHECK(log_mean_exp(-700.0, -700.0 + 1e-9) > 0.0);
  CHECK(log_mean_exp(1.0, 2.0) == doctest::Approx(log_mean_exp(2.0, 1.0)));
}

TEST_CASE("posterior is a fixed point of both KL schemes") {
  const BayesModel model(PotentialField::quadratic(Matrix::Identity(1, 1)), catalog::double_well(1),
                         catalog::euclidean(1), Box::cube(1, -8, 8));
  const Grid g = Grid::line_spacing(-8, 8, 0.02);
  const KlFlow flow(model, g);
  FlowState s{0.0, flow.theta_from_lebesgue(flow.stationary()), Representation::theta, 0.01, Scheme::semi_implicit};
  const auto next = flow.step_fokker_planck(s);
  CHECK(max_abs_diff(next.density, s.density) <= 1e-10 * max_value(s.density));

  s.scheme = Scheme::explicit_euler;
  s.dt = 0.5 * flow.max_explicit_dt();
  CHECK(max_abs_diff(flow.step_fokker_planck(s).density, s.density) <= 1e-10 * max_value(s.density));

  FlowState r{0.0, GridDensity(g, std::vector<double>(g.size(), 1.0)), Representation::rho, 0.05,
              Scheme::semi_implicit};
  CHECK(max_abs_diff(flow.step_weighted_laplacian(r).density, r.density) <= 1e-12);
  r.scheme = Scheme::explicit_euler;
  r.dt = 0.5 * flow.max_explicit_dt();
  CHECK(max_abs_diff(flow.step_weighted_laplacian(r).density, r.density) <= 1e-12);
}

TEST_CASE("position-dependent metric keeps the volume-weighted posterior stationary") {
  const BayesModel model(PotentialField::quadratic(Matrix::Identity(2, 2)), PotentialField::zero(2),
                         catalog::diag_poly(), Box::cube(2, -7, 7));
  const Grid g = Grid::plane(-7, 7, 57, -7, 7, 57);
  const KlFlow flow(model, g);
  FlowState s{0.0, flow.theta_from_lebesgue(flow.stationary()), Representation::theta, 0.01, Scheme::semi_implicit};
  const auto next = flow.step_fokker_planck(s);
  CHECK(max_abs_diff(next.density, s.density) <= 1e-10 * max_value(s.density));
  CHECK(next.density.mass() == doctest::Approx(s.density.mass()).epsilon(1e-10));
}

TEST_CASE("Ornstein-Uhlenbeck mean relaxes like exp(-t)") {
  const BayesModel model = ou_model(1.0, -8, 8);
  const Grid g = Grid::line_spacing(-8, 8, 0.01);
  const KlFlow flow(model, g);
  FlowState s{0.0, gaussian(g, 1.0, 1.0), Representation::theta, 1e-3, Scheme::semi_implicit};
  for (int step = 1; step <= 2000; ++step) {
    s = flow.step_fokker_planck(s);
    if (step % 250 == 0) {
      const double t = step * 1e-3;
      CHECK(s.density.mean()[0] == doctest::Approx(std::exp(-t)).epsilon(0.02));
    }
  }
}

TEST_CASE("pure diffusion spreads variance at rate two") {
  const BayesModel model = flat_model(-10, 10);
  const Grid g = Grid::line_spacing(-10, 10, 0.01);
  const KlFlow flow(model, g);
  const double v0 = 0.1;
  FlowState s{0.0, gaussian(g, 0.0, v0), Representation::theta, 1e-3, Scheme::semi_implicit};
  for (int step = 1; step <= 1000; ++step) s = flow.step_fokker_planck(s);
  CHECK(s.density.covariance()(0, 0) - v0 == doctest::Approx(2.0).epsilon(0.02));
}

TEST_CASE("explicit steps above the positivity bound are rejected") {
  const BayesModel model = ou_model(1.0, -8, 8);
  const Grid g = Grid::line_spacing(-8, 8, 0.05);
  const KlFlow flow(model, g);
  FlowState s{0.0, gaussian(g, 0.0, 1.0), Representation::theta, 2.0 * flow.max_explicit_dt(), Scheme::explicit_euler};
  try {
    flow.step_fokker_planck(s);
    FAIL("expected stability error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::stability);
  }
  s.representation = Representation::rho;
  CHECK_THROWS_AS(flow.step_fokker_planck(s), Error);
}

TEST_CASE("Fokker-Planck and weighted-Laplacian forms agree") {
  const BayesModel model = ou_model(1.0, -8, 8);
  const Grid g = Grid::line_spacing(-8, 8, 0.02);
  const KlFlow flow(model, g);
  const auto p0 = gaussian(g, 1.0, 0.5);
  FlowState a{0.0, flow.theta_from_lebesgue(p0), Representation::theta, 1e-3, Scheme::semi_implicit};
  FlowState b{0.0, flow.rho_from_lebesgue(p0), Representation::rho, 1e-3, Scheme::semi_implicit};
  for (int step = 0; step < 500; ++step) {
    a = flow.step_fokker_planck(a);
    b = flow.step_weighted_laplacian(b);
  }
  CHECK(l1_distance(flow.lebesgue_from_theta(a.density), flow.lebesgue_from_rho(b.density)) <= 1e-6);
}

TEST_CASE("weighted-Laplacian flow contracts at the spectral gap") {
  const BayesModel model = ou_model(1.0, -8, 8);
  const Grid g = Grid::line_spacing(-8, 8, 0.01);
  const KlFlow flow(model, g);
  const auto mu = flow.stationary();
  auto dev = [&](const GridDensity& rho) {
    const auto w = g.weights();
    double s = 0.0;
    for (std::size_t i = 0; i < rho.size(); ++i) s += w[i] * mu[i] * (rho[i] - 1.0) * (rho[i] - 1.0);
    return std::sqrt(s);
  };
  FlowState r{0.0, flow.rho_from_lebesgue(gaussian(g, 1.5, 0.6)), Representation::rho, 1e-3, Scheme::semi_implicit};
  const double d0 = dev(r.density);
  for (int step = 1; step <= 2000; ++step) {
    r = flow.step_weighted_laplacian(r);
    if (step % 200 == 0) CHECK(dev(r.density) <= 1.03 * std::exp(-step * 1e-3) * d0);
  }
}

TEST_CASE("property: both flows conserve mass for every catalog model") {
  const Grid g = Grid::line_spacing(-6, 6, 0.04);
  const std::vector<BayesModel> models{
      ou_model(1.0, -6, 6),
      BayesModel(catalog::double_well(1), PotentialField::zero(1), catalog::euclidean(1), Box::cube(1, -6, 6)),
      BayesModel(catalog::heavy_tail(1), PotentialField::quadratic(Matrix::Identity(1, 1)), catalog::euclidean(1),
                 Box::cube(1, -6, 6)),
      flat_model(-6, 6),
      BayesModel(PotentialField::zero(1), catalog::double_well(1), catalog::conformal(0.2, 1), Box::cube(1, -6, 6))};
  for (const auto& model : models) {
    const KlFlow flow(model, g);
    for (auto scheme : {Scheme::semi_implicit, Scheme::explicit_euler}) {
      FlowState s{0.0, flow.theta_from_lebesgue(gaussian(g, 0.5, 0.8)), Representation::theta,
                  scheme == Scheme::explicit_euler ? 0.5 * flow.max_explicit_dt() : 0.01, scheme};
      for (int step = 0; step < 50; ++step) {
        const double before = flow.lebesgue_from_theta(s.density).mass();
        s = flow.step_fokker_planck(s);
        CHECK(std::abs(flow.lebesgue_from_theta(s.density).mass() - before) <= 1e-10);
        for (double v : s.density.values()) CHECK(v >= 0.0);
      }
    }
    const PorousMediumFlow pm(model, g);
    FlowState s{0.0, pm.rho_tilde_from_measure(gaussian(g, 0.5, 0.8)), Representation::rho_tilde, 0.0,
                Scheme::explicit_euler};
    for (int step = 0; step < 200; ++step) {
      const double before = pm.mass(s.density);
      s.dt = pm.stable_dt(s.density);
      s = pm.step(s);
      CHECK(std::abs(pm.mass(s.density) - before) <= 1e-8);
    }
  }
}

TEST_CASE("J_KL decreases along the Fokker-Planck flow") {
  const BayesModel model(catalog::double_well(1), PotentialField::quadratic(Matrix::Identity(1, 1)),
                         catalog::euclidean(1), Box::cube(1, -6, 6));
  const Grid g = Grid::line_spacing(-6, 6, 0.02);
  const KlFlow flow(model, g);
  FlowState s{0.0, gaussian(g, 2.0, 0.3), Representation::theta, 5e-3, Scheme::semi_implicit};
  double prev = j_kl(flow.lebesgue_from_theta(s.density), model).value();
  for (int step = 0; step < 400; ++step) {
    s = flow.step_fokker_planck(s);
    const double now = j_kl(flow.lebesgue_from_theta(s.density), model).value();
    CHECK(now <= prev + 1e-12);
    prev = now;
  }
}

TEST_CASE("porous-medium stationary state") {
  const BayesModel model(PotentialField::quadratic(Matrix::Identity(1, 1)),
                         PotentialField::quadratic(Matrix::Constant(1, 1, 0.3), Vector::Constant(1, 0.5)),
                         catalog::euclidean(1), Box::cube(1, -6, 6));
  const Grid g = Grid::line_spacing(-6, 6, 0.05);
  const PorousMediumFlow pm(model, g);
  const auto st = pm.stationary();
  CHECK(pm.mass(st) == doctest::Approx(1.0).epsilon(1e-12));
  FlowState s{0.0, st, Representation::rho_tilde, 0.0, Scheme::explicit_euler};
  while (s.t < 1.0) {
    s.dt = std::min(pm.stable_dt(s.density), 1.0 - s.t);
    s = pm.step(s);
  }
  CHECK(max_abs_diff(s.density, st) <= 1e-8);

  // The flow's own energy has this state as its minimizer among unit-mass
  // perturbations.
  std::vector<double> bumped = st.values();
  const auto w = g.weights();
  const auto& pi = pm.prior().values();
  const std::size_t i = g.size() / 3, j = 2 * g.size() / 3;
  bumped[i] += 1e-3 / (w[i] * pi[i]);
  bumped[j] -= 1e-3 / (w[j] * pi[j]);
  CHECK(pm.energy(GridDensity(g, bumped)) > pm.energy(st));
}

TEST_CASE("porous-medium energy decreases and flat-likelihood chi2 decreases") {
  const BayesModel model(PotentialField::quadratic(Matrix::Identity(1, 1)),
                         PotentialField::quadratic(Matrix::Constant(1, 1, 0.5), Vector::Constant(1, 1.0)),
                         catalog::euclidean(1), Box::cube(1, -6, 6));
  const Grid g = Grid::line_spacing(-6, 6, 0.05);
  const PorousMediumFlow pm(model, g);
  FlowState s{0.0, pm.rho_tilde_from_measure(gaussian(g, -1.0, 0.4)), Representation::rho_tilde, 0.0,
              Scheme::explicit_euler};
  double prev = pm.energy(s.density);
  for (int step = 0; step < 2000; ++step) {
    s.dt = pm.stable_dt(s.density);
    s = pm.step(s);
    const double now = pm.energy(s.density);
    CHECK(now <= prev + 1e-13);
    prev = now;
  }

  const BayesModel flat_lik = ou_model(1.0, -6, 6);
  const PorousMediumFlow pf(flat_lik, g);
  FlowState f{0.0, pf.rho_tilde_from_measure(gaussian(g, 1.0, 0.3)), Representation::rho_tilde, 0.0,
              Scheme::explicit_euler};
  double jprev = j_chi2(pf.measure_from_rho_tilde(f.density), flat_lik).value();
  for (int step = 0; step < 2000; ++step) {
    f.dt = pf.stable_dt(f.density);
    f = pf.step(f);
    const double now = j_chi2(pf.measure_from_rho_tilde(f.density), flat_lik).value();
    CHECK(now <= jprev + 1e-13);
    jprev = now;
  }
}

TEST_CASE("porous-medium steps beyond the bound are rejected") {
  const Grid g = Grid::line_spacing(-4, 4, 0.05);
  const PorousMediumFlow pm(flat_model(-4, 4), g);
  FlowState s{0.0, pm.rho_tilde_from_measure(gaussian(g, 0.0, 0.5)), Representation::rho_tilde, 0.0,
              Scheme::explicit_euler};
  s.dt = 2.0 * pm.step_bound(s.density);
  try {
    pm.step(s);
    FAIL("expected stability error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::stability);
  }
}

TEST_CASE("flat porous-medium flow follows the Barenblatt profile") {
  const double lo = -4.0, hi = 4.0, len = hi - lo;
  const Grid g = Grid::line_spacing(lo, hi, 0.01);
  const PorousMediumFlow pm(flat_model(lo, hi), g);
  // rho~ = L p with p a probability density, so rho~ has mass L.
  const Barenblatt exact(len);
  const double t0 = 0.01, t1 = 0.1;
  std::vector<double> init(g.size());
  for (std::size_t i = 0; i < init.size(); ++i) init[i] = exact(g.node(i)[0], t0);
  FlowState s{0.0, GridDensity(g, init), Representation::rho_tilde, 0.0, Scheme::explicit_euler};
  s.density.values() = pm.rho_tilde_from_measure(pm.measure_from_rho_tilde(s.density).normalized()).values();
  const double final_time = t1 - t0;
  while (s.t < final_time - 1e-15) {
    s.dt = std::min(pm.stable_dt(s.density), final_time - s.t);
    s = pm.step(s);
  }
  double l1 = 0.0;
  const auto w = g.weights();
  for (std::size_t i = 0; i < g.size(); ++i) l1 += w[i] * std::abs(s.density[i] - exact(g.node(i)[0], t1)) / len;
  CHECK(l1 < 0.01);
  double front = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (s.density[i] > 1e-8 * max_value(s.density)) front = std::max(front, std::abs(g.node(i)[0]));
  CHECK(front == doctest::Approx(exact.radius(t1)).epsilon(0.05));
}

TEST_CASE("wasserstein distance in one dimension") {
  const Grid g = Grid::line_spacing(-12, 12, 0.005);
  const auto a = gaussian(g, 0.0, 1.0);
  CHECK(wasserstein_1d(a, a) == 0.0);
  CHECK(std::abs(wasserstein_1d(a, gaussian(g, 2.0, 1.0)) - 2.0) < 1e-3);
  CHECK(std::abs(wasserstein_1d(a, gaussian(g, 0.0, 4.0)) - 1.0) < 1e-3);
  const Grid g2 = Grid::plane(0, 1, 3, 0, 1, 3);
  const GridDensity d2(g2, std::vector<double>(9, 1.0));
  try {
    wasserstein_1d(d2, d2);
    FAIL("expected unsupported_dimension");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::unsupported_dimension);
  }
}

TEST_CASE("log-rate fit") {
  std::vector<double> t, v;
  for (int i = 0; i <= 10; ++i) {
    t.push_back(0.1 * i);
    v.push_back(3.0 * std::exp(-1.7 * 0.1 * i));
  }
  CHECK(fit_log_rate(t, v, 0.0, 1.0) == doctest::Approx(-1.7).epsilon(1e-12));
  v[3] = 0.0;
  v[4] = -1.0;
  CHECK(fit_log_rate(t, v, 0.0, 1.0) == doctest::Approx(-1.7).epsilon(1e-12));
  try {
    fit_log_rate(t, v, 0.25, 0.45);
    FAIL("expected fit error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::fit);
  }
}

TEST_CASE("decay curves on the OU model") {
  const BayesModel model = ou_model(1.0, -8, 8);
  const Grid g = Grid::line_spacing(-8, 8, 0.01);
  DecayOptions opt;
  opt.window_begin = 0.5;
  const auto kl = decay_curve(model, gaussian(g, 2.0, 1.0), FlowKind::kl_fp, Functional::kl, opt);
  CHECK(kl.fitted_rate <= -1.0 + 0.05);
  CHECK(kl.times.size() == 41);
  for (std::size_t i = 1; i < kl.times.size(); ++i) CHECK(kl.times[i] > kl.times[i - 1]);

  DecayOptions rest;
  rest.t_end = 0.5;
  rest.fit = false;
  const auto at_rest = decay_curve(model, KlFlow(model, g).stationary(), FlowKind::kl_fp, Functional::kl, rest);
  for (double v : at_rest.values) CHECK(std::abs(v) <= 1e-9);
  CHECK(std::isnan(at_rest.fitted_rate));
}

TEST_CASE("W2 along the OU flow decreases and tracks the Gaussian closed form") {
  const BayesModel model = ou_model(1.0, -10, 10);
  const Grid g = Grid::line_spacing(-10, 10, 0.005);
  DecayOptions opt;
  opt.t_end = 1.0;
  opt.record_every = 0.1;
  const auto c = decay_curve(model, gaussian(g, 2.0, 0.25), FlowKind::kl_fp, Functional::w2, opt);
  for (std::size_t i = 1; i < c.values.size(); ++i) CHECK(c.values[i] <= c.values[i - 1] + 1e-4);
  for (std::size_t i = 0; i < c.values.size(); ++i) {
    // OU keeps Gaussians Gaussian: mean 2 e^{-t}, variance 1 - 0.75 e^{-2t}.
    const double t = c.times[i];
    const double m = 2.0 * std::exp(-t), sd = std::sqrt(1.0 - 0.75 * std::exp(-2.0 * t));
    CHECK(std::abs(c.values[i] - std::hypot(m, 1.0 - sd)) < 2e-3);
  }
}

TEST_CASE("refining the grid barely moves the fitted KL rate") {
  const BayesModel model = ou_model(1.0, -8, 8);
  DecayOptions opt;
  opt.window_begin = 0.5;
  double rates[2];
  int k = 0;
  for (double dx : {0.02, 0.01}) {
    const Grid g = Grid::line_spacing(-8, 8, dx);
    rates[k++] = decay_curve(model, gaussian(g, 1.0, 1.0), FlowKind::kl_fp, Functional::kl, opt).fitted_rate;
  }
  CHECK(std::abs(rates[1] - rates[0]) <= 0.01 * std::abs(rates[1]));
}

TEST_CASE("both flows reach the same stationary density on the OU model") {
  const BayesModel model = ou_model(1.0, -8, 8);
  const Grid g = Grid::line_spacing(-8, 8, 0.05);
  const auto p0 = gaussian(g, 1.0, 0.5);
  const KlFlow kl(model, g);
  FlowState a{0.0, kl.theta_from_lebesgue(p0), Representation::theta, 0.01, Scheme::semi_implicit};
  while (a.t < 10.0 - 1e-9) a = kl.step_fokker_planck(a);
  const PorousMediumFlow pm(model, g);
  FlowState b{0.0, pm.rho_tilde_from_measure(p0), Representation::rho_tilde, 0.0, Scheme::explicit_euler};
  while (b.t < 10.0 - 1e-12) {
    b.dt = std::min(pm.stable_dt(b.density), 10.0 - b.t);
    b = pm.step(b);
  }
  CHECK(l1_distance(kl.lebesgue_from_theta(a.density), pm.measure_from_rho_tilde(b.density)) <= 1e-3);
}

TEST_CASE("chi2 decay curve records at exact times") {
  const BayesModel model = ou_model(1.0, -6, 6);
  const Grid g = Grid::line_spacing(-6, 6, 0.05);
  DecayOptions opt;
  opt.t_end = 1.0;
  opt.record_every = 0.25;
  const auto c = decay_curve(model, gaussian(g, 1.0, 0.5), FlowKind::chi2_pm, Functional::chi2, opt);
  REQUIRE(c.times.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(c.times[i] == doctest::Approx(0.25 * i).epsilon(1e-12));
  CHECK(c.fitted_rate < 0.0);
  std::ostringstream os;
  write_decay_curve(os, c);
  CHECK(os.str().rfind("t,value\n", 0) == 0);
  CHECK(os.str().find("# fitted_rate=") != std::string::npos);
}

TEST_CASE("two-dimensional flows need a diagonal metric") {
  Matrix g(2, 2);
  g << 2.0, 0.5, 0.5, 1.0;
  const BayesModel model(PotentialField::quadratic(Matrix::Identity(2, 2)), PotentialField::zero(2),
                         MetricField::constant(g), Box::cube(2, -6, 6));
  try {
    KlFlow(model, Grid::plane(-6, 6, 25, -6, 6, 25));
    FAIL("expected unsupported_dimension");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::unsupported_dimension);
  }
}

TEST_CASE("parsers name the bad value") {
  CHECK(parse_flow_kind("chi2_pm") == FlowKind::chi2_pm);
  CHECK(parse_functional("w2") == Functional::w2);
  try {
    parse_functional("tv");
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
    CHECK(std::string(e.what()).find("tv") != std::string::npos);
  }
}

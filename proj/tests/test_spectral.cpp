#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "bayesflow/catalog.hpp"
#include "bayesflow/error.hpp"
#include "bayesflow/pde_flows.hpp"
#include "bayesflow/spectral.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace bayesflow;

namespace {

constexpr double kPi = std::numbers::pi;

BayesModel ou_model(double s2, double half_width) {
  return BayesModel(PotentialField::quadratic(Matrix::Constant(1, 1, 1.0 / s2)), PotentialField::zero(1),
                    catalog::euclidean(1), Box::cube(1, -half_width, half_width));
}

BayesModel well_model() {
  return BayesModel(catalog::double_well(1), PotentialField::zero(1), catalog::euclidean(1), Box::cube(1, -4, 4));
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& gen) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(gen);
  return v;
}

std::vector<double> centered(const WeightedLaplacianOperator& op, std::vector<double> f) {
  const double m = op.mean(f);
  for (auto& v : f) v -= m;
  return f;
}

// Random smooth functions: polynomials up to degree 8 in x / scale plus a few
// sines across the box, with normal coefficients.
std::vector<double> smooth_trial(const WeightedLaplacianOperator& op, std::mt19937_64& gen, double scale) {
  const Grid& g = op.grid();
  std::normal_distribution<double> d;
  std::vector<double> coef(14);
  for (auto& c : coef) c = d(gen);
  std::vector<double> f(g.size(), 0.0);
  const double len = g.xmax - g.xmin;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double x = g.node(i)[0];
    double p = 1.0;
    for (int k = 0; k <= 8; ++k) {
      f[i] += coef[static_cast<std::size_t>(k)] * p / (1.0 + k);
      p *= x / scale;
    }
    for (int k = 1; k <= 5; ++k)
      f[i] += 0.3 * coef[static_cast<std::size_t>(8 + k)] * std::sin(k * kPi * (x - g.xmin) / len);
  }
  return centered(op, std::move(f));
}

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::input;
}

}  // namespace

TEST_CASE("Neumann box gap is pi squared") {
  BayesModel flat(PotentialField::zero(1), PotentialField::zero(1), catalog::euclidean(1), Box::cube(1, 0, 1));
  flat.set_bounded_domain(true);
  const auto op = assemble_weighted_laplacian(flat, Grid::line(0, 1, 257));
  const auto r = spectral_gap(op);
  CHECK(r.lambda2 == doctest::Approx(kPi * kPi).epsilon(0.01));
  CHECK(r.residual <= 1e-8);
  // Lowest Neumann mode cos(pi x) up to sign.
  double dot = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < op.size(); ++i) {
    const double c = std::cos(kPi * op.grid().node(i)[0]);
    dot += op.mu_weights()[i] * c * r.eigenfunction[i];
    norm += op.mu_weights()[i] * c * c;
  }
  CHECK(std::abs(dot) / std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("Gaussian gap is the inverse variance") {
  for (double s2 : {0.5, 1.0, 2.0}) {
    CAPTURE(s2);
    const double hw = 10.0 * std::sqrt(s2);
    const auto op = assemble_weighted_laplacian(ou_model(s2, hw), Grid::line_spacing(-hw, hw, 0.01 * std::sqrt(s2)));
    const auto r = spectral_gap(op);
    CHECK(r.lambda2 == doctest::Approx(1.0 / s2).epsilon(0.01));
    CHECK(r.residual <= 1e-8);
  }
}

TEST_CASE("operator annihilates constants, is mu-self-adjoint and positive semi-definite") {
  std::mt19937_64 gen(41);
  const BayesModel planar(catalog::gauss_quadratic(Matrix::Identity(2, 2), Vector::Zero(2)), catalog::double_well(2),
                          catalog::diag_poly(), Box::cube(2, -4, 4));
  const std::vector<WeightedLaplacianOperator> ops{
      assemble_weighted_laplacian(ou_model(1.0, 8), Grid::line_spacing(-8, 8, 0.02)),
      assemble_weighted_laplacian(well_model(), Grid::line_spacing(-4, 4, 0.01)),
      assemble_weighted_laplacian(planar, Grid::plane(-4, 4, 41, -4, 4, 41))};
  for (const auto& op : ops) {
    const auto a1 = op.apply(std::vector<double>(op.size(), 1.0));
    double top = 0.0;
    for (double v : a1) top = std::max(top, std::abs(v));
    CHECK(top <= 1e-12);
    for (int trial = 0; trial < 10; ++trial) {
      const auto f = random_vec(op.size(), gen), h = random_vec(op.size(), gen);
      const auto af = op.apply(f), ah = op.apply(h);
      const double lhs = op.inner(af, h), rhs = op.inner(f, ah);
      const double scale = std::sqrt(op.inner(af, af) * op.inner(h, h));
      CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, scale));
      CHECK(op.inner(f, af) >= -1e-12 * std::max(1.0, scale));
      CHECK(op.inner(f, af) == doctest::Approx(op.dirichlet_form(f)).epsilon(1e-10));
    }
  }
}

TEST_CASE("dense and inverse-iteration gaps agree") {
  const auto op = assemble_weighted_laplacian(well_model(), Grid::line_spacing(-4, 4, 0.01));
  const auto a = spectral_gap(op);
  const auto b = dense_spectral_gap(op);
  CHECK(a.lambda2 == doctest::Approx(b.lambda2).epsilon(1e-8));
  CHECK(b.residual <= 1e-8);
  // Eigenfunction normalization and Rayleigh quotient.
  CHECK(std::abs(op.mean(a.eigenfunction)) <= 1e-10);
  CHECK(op.inner(a.eigenfunction, a.eigenfunction) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(op.dirichlet_form(a.eigenfunction) - a.lambda2) <= std::max(a.residual, 1e-12));

  const auto planar = assemble_weighted_laplacian(
      BayesModel(catalog::gauss_quadratic(Matrix::Identity(2, 2), Vector::Zero(2)), PotentialField::zero(2),
                 catalog::diag_poly(), Box::cube(2, -5, 5)),
      Grid::plane(-5, 5, 31, -5, 5, 31));
  CHECK(spectral_gap(planar).lambda2 == doctest::Approx(dense_spectral_gap(planar).lambda2).epsilon(1e-8));
}

TEST_CASE("separated supports give a vanishing gap") {
  // Two bumps at +-5, zero density for |x| < 3.
  const PotentialField bumps(1, [](const Vector& x) {
    const double d = std::abs(x[0]) - 5.0;
    return std::abs(d) < 2.0 ? 2.0 * d * d : std::numeric_limits<double>::infinity();
  });
  BayesModel model(bumps, PotentialField::zero(1), catalog::euclidean(1), Box::cube(1, -8, 8));
  model.set_bounded_domain(true);
  const auto op = assemble_weighted_laplacian(model, Grid::line_spacing(-8, 8, 0.02));
  std::vector<int> label;
  CHECK(op.components(label) == 2);
  CHECK(spectral_gap(op).lambda2 < 1e-6);
  // The same two bumps joined by a finite (if deep) valley are metastable.
  const PotentialField joined(1, [](const Vector& x) {
    const double d = std::abs(x[0]) - 5.0;
    return 2.0 * d * d;
  });
  const auto op2 = assemble_weighted_laplacian(
      BayesModel(joined, PotentialField::zero(1), catalog::euclidean(1), Box::cube(1, -10, 10)),
      Grid::line_spacing(-10, 10, 0.02));
  CHECK(spectral_gap(op2).lambda2 < 1e-6);
}

TEST_CASE("non-finite potentials are rejected at assembly") {
  const PotentialField bad(1, [](const Vector& x) { return x[0] > 1.0 ? std::nan("") : 0.0; });
  try {
    assemble_weighted_laplacian(ou_model(1.0, 2), Grid::line(-2, 2, 9));
    assemble_weighted_laplacian(BayesModel(bad, PotentialField::zero(1), catalog::euclidean(1), Box::cube(1, -2, 2)),
                                Grid::line(-2, 2, 9));
    FAIL("expected assembly error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::assembly);
    CHECK(std::string(e.what()).find("7") != std::string::npos);
  }
}

TEST_CASE("Poincare and convexity checks on the OU model") {
  std::mt19937_64 gen(5);
  const auto op = assemble_weighted_laplacian(ou_model(1.0, 8), Grid::line_spacing(-8, 8, 0.02));
  const auto gap = spectral_gap(op);

  // Equality at the eigenfunction.
  const auto eig = poincare_convexity_check(op, {gap.eigenfunction}, gap);
  CHECK(eig.poincare_holds);
  CHECK(std::abs(eig.min_poincare_slack - 1e-8) <= std::max(gap.residual, 1e-12));

  // f0 = f1: the identity is D(f0) = D(f0).
  const auto f = smooth_trial(op, gen, 3.0);
  const auto same = poincare_convexity_check(op, {f, f}, gap);
  CHECK(same.parallelogram_holds);
  CHECK(same.max_parallelogram_error <= 1e-14);

  std::vector<std::vector<double>> trials;
  for (int i = 0; i < 40; ++i) trials.push_back(smooth_trial(op, gen, 3.0));
  const auto rep = poincare_convexity_check(op, trials, gap);
  CHECK(rep.poincare_holds);
  CHECK(rep.parallelogram_holds);
  CHECK(rep.max_parallelogram_error <= 1e-10);
  CHECK(rep.convexity_holds);
  CHECK(rep.trial_count == 40);

  auto shifted = trials[0];
  for (auto& v : shifted) v += 0.1;
  CHECK(kind_of([&] { poincare_convexity_check(op, {shifted}, gap); }) == ErrorKind::input);
}

TEST_CASE("best convexity constant is twice the gap") {
  std::mt19937_64 gen(6);
  struct Case {
    const char* name;
    BayesModel model;
    Grid grid;
    double scale;
  };
  const std::vector<Case> cases{
      {"ou", ou_model(1.0, 8), Grid::line_spacing(-8, 8, 0.02), 3.0},
      {"narrow ou", ou_model(0.25, 4), Grid::line_spacing(-4, 4, 0.01), 1.5},
      {"double well", well_model(), Grid::line_spacing(-4, 4, 0.01), 2.0},
      {"gauss prior, double-well likelihood",
       BayesModel(PotentialField::quadratic(Matrix::Identity(1, 1)), catalog::double_well(1), catalog::euclidean(1),
                  Box::cube(1, -5, 5)),
       Grid::line_spacing(-5, 5, 0.01), 2.0}};
  for (const auto& c : cases) {
    CAPTURE(c.name);
    const auto op = assemble_weighted_laplacian(c.model, c.grid);
    const auto gap = spectral_gap(op);
    std::vector<std::vector<double>> trials;
    for (int i = 0; i < 400; ++i) trials.push_back(smooth_trial(op, gen, c.scale));
    const auto rep = poincare_convexity_check(op, trials, gap);
    CHECK(rep.convexity_holds);
    CHECK(rep.best_convexity_constant >= 2.0 * gap.lambda2 * (1.0 - 1e-8));
    CHECK(rep.best_convexity_constant <= 2.0 * gap.lambda2 * 1.05);
  }
}

TEST_CASE("spectral gap matches the L2 decay rate of the flow") {
  struct Case {
    const char* name;
    BayesModel model;
    double mean, var, begin, end;
  };
  const std::vector<Case> cases{{"ou", ou_model(1.0, 8), 0.7, 1.3, 3.0, 8.0},
                                {"double well", well_model(), 1.0, 0.3, 4.0, 10.0}};
  for (const auto& c : cases) {
    CAPTURE(c.name);
    const Grid g = Grid::line_spacing(c.model.domain().lower[0], c.model.domain().upper[0], 0.01);
    const double lambda2 = spectral_gap(assemble_weighted_laplacian(c.model, g)).lambda2;
    const auto init = GridDensity::from_function(g, [&](const Vector& x) {
                        return std::exp(-0.5 * (x[0] - c.mean) * (x[0] - c.mean) / c.var);
                      }).normalized();
    DecayOptions opt;
    opt.t_end = c.end;
    opt.record_every = 0.1;
    opt.dt = 1e-3;
    opt.window_begin = c.begin;
    opt.window_end = c.end;
    const auto curve = decay_curve(c.model, init, FlowKind::kl_fp, Functional::l2, opt);
    CHECK(-curve.fitted_rate == doctest::Approx(lambda2).epsilon(0.03));
  }
}

TEST_CASE("convex envelope") {
  const std::vector<double> convex{4.0, 1.0, 0.0, 1.0, 4.0, 9.0};
  CHECK(convex_envelope_1d(convex) == convex);

  std::vector<double> absval;
  for (int i = -10; i <= 10; ++i) absval.push_back(std::abs(0.1 * i));
  const auto abs_env = convex_envelope_1d(absval);
  for (std::size_t i = 0; i < absval.size(); ++i) CHECK(abs_env[i] == doctest::Approx(absval[i]).epsilon(1e-14));

  const int n = 401;
  for (double eps : {1.0, 0.5, 0.1}) {
    CAPTURE(eps);
    std::vector<double> t(n), w(n);
    for (int i = 0; i < n; ++i) {
      t[i] = -2.0 + 4.0 * i / (n - 1);
      w[i] = (t[i] * t[i] - 1.0) * (t[i] * t[i] - 1.0) / (4.0 * eps);
    }
    const auto env = convex_envelope_1d(w);
    double gap = 0.0;
    for (int i = 0; i < n; ++i) {
      CHECK(env[i] <= w[i]);
      if (std::abs(t[i]) <= 1.0 + 1e-12) CHECK(std::abs(env[i]) <= 1e-12);
      else CHECK(env[i] == w[i]);
      gap = std::max(gap, w[i] - env[i]);
    }
    for (int i = 1; i + 1 < n; ++i) CHECK(env[i - 1] - 2.0 * env[i] + env[i + 1] >= -1e-12);
    CHECK(gap == doctest::Approx(1.0 / (4.0 * eps)).epsilon(1e-12));

    // Separable sum over k labeled coordinates: the gaps add.
    for (int k = 1; k <= 3; ++k) CHECK(k * gap == doctest::Approx(k / (4.0 * eps)).epsilon(1e-8));
  }

  std::mt19937_64 gen(12);
  const auto r = random_vec(200, gen);
  const auto env = convex_envelope_1d(r);
  for (std::size_t i = 0; i < r.size(); ++i) CHECK(env[i] <= r[i]);
  for (std::size_t i = 1; i + 1 < r.size(); ++i) CHECK(env[i - 1] - 2.0 * env[i] + env[i + 1] >= -1e-12);
  CHECK(kind_of([] { convex_envelope_1d({1.0}); }) == ErrorKind::input);
}

TEST_CASE("Ginzburg-Landau Poincare bound") {
  CHECK(gl_poincare_bound(0, 0.3, 0.5, 2.0) == doctest::Approx(0.25));
  CHECK(gl_poincare_bound(2, 1.0, 0.5, 1.0) == doctest::Approx(0.06767).epsilon(1e-4));
  CHECK(gl_poincare_bound(2, 1.0, 0.5, 1.0) == doctest::Approx(std::exp(-2.0) * 0.5).epsilon(1e-15));
  for (int k = 0; k < 5; ++k) CHECK(gl_poincare_bound(k + 1, 0.7, 1.3, 0.5) < gl_poincare_bound(k, 0.7, 1.3, 0.5));
  for (double eps : {0.1, 0.2, 0.5, 1.0})
    CHECK(gl_poincare_bound(2, eps, 1.3, 0.5) < gl_poincare_bound(2, 2.0 * eps, 1.3, 0.5));
  CHECK(kind_of([] { gl_poincare_bound(1, 0.0, 1.0, 1.0); }) == ErrorKind::numeric_domain);
  CHECK(kind_of([] { gl_poincare_bound(1, 1.0, -1.0, 1.0); }) == ErrorKind::numeric_domain);
  CHECK(kind_of([] { gl_poincare_bound(1, 1.0, 1.0, 0.0); }) == ErrorKind::numeric_domain);
}

TEST_CASE("spectral result serializes") {
  SpectralResult r;
  r.lambda2 = 0.5;
  r.residual = 1e-11;
  r.n_iter = 12;
  const auto j = nlohmann::json::parse(spectral_json(r));
  CHECK(j["lambda2"] == 0.5);
  CHECK(j["residual"] == 1e-11);
  CHECK(j["n_iter"] == 12);
}

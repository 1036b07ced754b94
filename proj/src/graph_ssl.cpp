#include "bayesflow/graph_ssl.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <memory>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include "bayesflow/catalog.hpp"
#include "bayesflow/error.hpp"

namespace bayesflow {

Likelihood parse_likelihood(const std::string& s) {
  if (s == "probit") return Likelihood::probit;
  if (s == "logistic") return Likelihood::logistic;
  if (s == "gl") return Likelihood::gl;
  fail(ErrorKind::config, "unknown likelihood '" + s + "' (expected probit, logistic or gl)");
}

double hat_kernel(double s) { return std::max(0.0, 1.0 - s); }

Matrix build_graph(const Matrix& points, const std::function<double(double)>& kernel, double r) {
  require(points.rows() >= 2, ErrorKind::input, "a graph needs at least 2 points");
  require(r > 0.0 && std::isfinite(r), ErrorKind::input, "connectivity radius must be positive");
  const Eigen::Index n = points.rows();
  Matrix w = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = kernel((points.row(i) - points.row(j)).norm() / r);
      require(std::isfinite(v) && v >= 0.0, ErrorKind::input, "kernel must be finite and nonnegative");
      w(i, j) = w(j, i) = v;
    }
  return w;
}

Matrix read_edge_list(std::istream& is, int n) {
  require(n >= 2, ErrorKind::input, "a graph needs at least 2 nodes");
  Matrix w = Matrix::Zero(n, n);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::istringstream ls(line);
    int i, j;
    double v;
    if (!(ls >> i >> j >> v))
      fail(ErrorKind::input, "edge list line " + std::to_string(lineno) + " is not 'i j w'");
    require(i >= 0 && i < n && j >= 0 && j < n && i != j, ErrorKind::input,
            "edge list line " + std::to_string(lineno) + " has an invalid node index");
    require(std::isfinite(v) && v >= 0.0, ErrorKind::input, "edge weights must be nonnegative");
    w(i, j) = w(j, i) = v;
  }
  return w;
}

Matrix read_points_csv(std::istream& is) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        fail(ErrorKind::input, "point CSV cell '" + cell + "' is not a number");
      }
    }
    require(rows.empty() || row.size() == rows.front().size(), ErrorKind::input,
            "point CSV rows have different lengths");
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), ErrorKind::input, "point CSV is empty");
  Matrix p(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k)
      p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  return p;
}

void read_labels(std::istream& is, std::vector<int>& index, std::vector<double>& value) {
  index.clear();
  value.clear();
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::istringstream ls(line);
    int j;
    double y;
    if (!(ls >> j >> y)) fail(ErrorKind::input, "label line '" + line + "' is not 'j y'");
    index.push_back(j);
    value.push_back(y);
  }
}

Vector project_zero_mean(const Vector& u) { return u.array() - u.mean(); }

GraphModel::GraphModel(Matrix weights, double alpha, std::vector<int> labeled,
                       std::vector<double> labels, Likelihood likelihood, double gamma,
                       double epsilon)
    : weights_(std::move(weights)), alpha_(alpha), labeled_(std::move(labeled)),
      labels_(std::move(labels)), likelihood_(likelihood), gamma_(gamma), epsilon_(epsilon) {
  const Eigen::Index n = weights_.rows();
  require(n >= 2 && weights_.cols() == n, ErrorKind::input, "weight matrix must be square, n >= 2");
  const double scale = std::max(1.0, weights_.cwiseAbs().maxCoeff());
  require((weights_ - weights_.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale, ErrorKind::input,
          "weight matrix must be symmetric");
  require(weights_.minCoeff() >= 0.0 && weights_.allFinite(), ErrorKind::input,
          "weights must be finite and nonnegative");
  require(alpha_ > 0.0 && gamma_ > 0.0 && epsilon_ > 0.0, ErrorKind::input,
          "alpha, gamma and epsilon must be positive");
  require(labeled_.size() == labels_.size(), ErrorKind::input, "label index and value counts differ");
  std::set<int> seen;
  for (std::size_t k = 0; k < labeled_.size(); ++k) {
    require(labeled_[k] >= 0 && labeled_[k] < n, ErrorKind::input, "label index out of range");
    require(seen.insert(labeled_[k]).second, ErrorKind::input, "duplicate label index");
    if (likelihood_ != Likelihood::gl)
      require(labels_[k] == 1.0 || labels_[k] == -1.0, ErrorKind::input,
              "probit and logistic labels must be +1 or -1");
    require(std::isfinite(labels_[k]), ErrorKind::input, "labels must be finite");
  }
  laplacian_ = -weights_;
  for (Eigen::Index i = 0; i < n; ++i) {
    double degree = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) degree += weights_(i, j);
    laplacian_(i, i) = degree;
  }

  const Matrix ones = Matrix::Ones(n, 1);
  Eigen::HouseholderQR<Matrix> qr(ones);
  const Matrix q = qr.householderQ() * Matrix::Identity(n, n);
  const Matrix basis = q.rightCols(n - 1);
  const Matrix t = basis.transpose() * laplacian_ * basis;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (t + t.transpose()));
  require(es.info() == Eigen::Success, ErrorKind::singular_prior, "Laplacian eigensolver failed");
  eigenvalues_ = es.eigenvalues().cwiseMax(0.0);
  eigenvectors_ = basis * es.eigenvectors();
}

bool GraphModel::connected() const {
  return eigenvalues_[0] > 1e-10 * std::max(1.0, eigenvalues_.maxCoeff());
}

Vector fractional_laplacian_apply(const GraphModel& model, double power, const Vector& u) {
  require(u.size() == model.n(), ErrorKind::input, "vector length differs from graph size");
  if (power < 0.0 && !model.connected())
    fail(ErrorKind::singular_prior, "graph is disconnected: L has a zero eigenvalue on U");
  Vector c = model.eigenvectors().transpose() * u;
  for (Eigen::Index k = 0; k < c.size(); ++k) c[k] *= std::pow(model.eigenvalues()[k], power);
  return project_zero_mean(model.eigenvectors() * c);
}

namespace {

// exp(z^2) erfc(z).
double erfcx(double z) {
  if (z < 0.0) {
    const double e = z * z > 700.0 ? std::numeric_limits<double>::infinity() : std::exp(z * z);
    return 2.0 * e - erfcx(-z);
  }
  if (z < 5.0) return std::exp(z * z) * std::erfc(z);
  double t = z;
  for (int k = 60; k >= 1; --k) t = z + 0.5 * k / t;
  return 1.0 / (std::sqrt(std::numbers::pi) * t);
}

double log_erfc(double z) {
  if (z < 5.0) return std::log(std::erfc(z));
  return -z * z + std::log(erfcx(z));
}

// log(1 + exp(x))
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_labels(const Vector& u, const std::vector<int>& labeled, const std::vector<double>& labels,
                  double gamma) {
  require(labeled.size() == labels.size(), ErrorKind::input, "label index and value counts differ");
  require(gamma > 0.0, ErrorKind::input, "gamma must be positive");
  for (int j : labeled) require(j >= 0 && j < u.size(), ErrorKind::input, "label index out of range");
}

}  // namespace

PhiValue probit_phi(const Vector& u, const std::vector<int>& labeled,
                    const std::vector<double>& labels, double gamma) {
  check_labels(u, labeled, labels, gamma);
  const double log_scale = std::log(gamma * std::sqrt(0.5 * std::numbers::pi));
  PhiValue out{0.0, Vector::Zero(u.size())};
  for (std::size_t k = 0; k < labeled.size(); ++k) {
    const int j = labeled[k];
    const double y = labels[k];
    const double w = y * u[j];
    const double z = -w / (gamma * std::numbers::sqrt2);
    out.value -= log_scale + log_erfc(z);
    const double h = 1.0 / (gamma * std::sqrt(0.5 * std::numbers::pi) * erfcx(z));
    out.gradient[j] -= y * h;
  }
  return out;
}

Vector probit_hessian_diag(const Vector& u, const std::vector<int>& labeled,
                           const std::vector<double>& labels, double gamma) {
  check_labels(u, labeled, labels, gamma);
  Vector d = Vector::Zero(u.size());
  for (std::size_t k = 0; k < labeled.size(); ++k) {
    const int j = labeled[k];
    const double w = labels[k] * u[j];
    const double z = -w / (gamma * std::numbers::sqrt2);
    const double h = 1.0 / (gamma * std::sqrt(0.5 * std::numbers::pi) * erfcx(z));
    d[j] += h * h + w * h / (gamma * gamma);
  }
  return d;
}

PhiValue logistic_phi(const Vector& u, const std::vector<int>& labeled,
                      const std::vector<double>& labels, double gamma) {
  check_labels(u, labeled, labels, gamma);
  PhiValue out{0.0, Vector::Zero(u.size())};
  for (std::size_t k = 0; k < labeled.size(); ++k) {
    const int j = labeled[k];
    const double y = labels[k];
    const double x = y * u[j] / gamma;
    out.value += softplus(-x);
    out.gradient[j] -= y * sigmoid(-x) / gamma;
  }
  return out;
}

Vector logistic_hessian_diag(const Vector& u, const std::vector<int>& labeled,
                             const std::vector<double>& labels, double gamma) {
  check_labels(u, labeled, labels, gamma);
  Vector d = Vector::Zero(u.size());
  for (std::size_t k = 0; k < labeled.size(); ++k) {
    const int j = labeled[k];
    const double x = labels[k] * u[j] / gamma;
    d[j] += sigmoid(x) * sigmoid(-x) / (gamma * gamma);
  }
  return d;
}

GlTerms gl_potentials(const Vector& u, const std::vector<int>& labeled,
                      const std::vector<double>& labels, double gamma, double epsilon) {
  check_labels(u, labeled, labels, gamma);
  require(epsilon > 0.0, ErrorKind::input, "epsilon must be positive");
  GlTerms out{{0.0, Vector::Zero(u.size())}, {0.0, Vector::Zero(u.size())}};
  for (std::size_t k = 0; k < labeled.size(); ++k) {
    const int j = labeled[k];
    const double t = u[j];
    const double well = t * t - 1.0;
    out.prior_extra.value += well * well / (4.0 * epsilon);
    out.prior_extra.gradient[j] += t * well / epsilon;
    const double r = t - labels[k];
    out.phi.value += r * r / (2.0 * gamma * gamma);
    out.phi.gradient[j] += r / (gamma * gamma);
  }
  return out;
}

PhiValue non_gaussian_terms(const GraphModel& model, const Vector& u) {
  switch (model.likelihood()) {
    case Likelihood::probit: return probit_phi(u, model.labeled(), model.labels(), model.gamma());
    case Likelihood::logistic: return logistic_phi(u, model.labeled(), model.labels(), model.gamma());
    case Likelihood::gl: {
      const GlTerms t = gl_potentials(u, model.labeled(), model.labels(), model.gamma(), model.epsilon());
      return {t.prior_extra.value + t.phi.value, t.prior_extra.gradient + t.phi.gradient};
    }
  }
  return {};
}

Vector non_gaussian_hessian_diag(const GraphModel& model, const Vector& u) {
  switch (model.likelihood()) {
    case Likelihood::probit: return probit_hessian_diag(u, model.labeled(), model.labels(), model.gamma());
    case Likelihood::logistic:
      return logistic_hessian_diag(u, model.labeled(), model.labels(), model.gamma());
    case Likelihood::gl: {
      Vector d = Vector::Zero(u.size());
      for (int j : model.labeled())
        d[j] += (3.0 * u[j] * u[j] - 1.0) / model.epsilon() + 1.0 / (model.gamma() * model.gamma());
      return d;
    }
  }
  return {};
}

double map_objective(const GraphModel& model, const Vector& u) {
  return 0.5 * u.dot(fractional_laplacian_apply(model, model.alpha(), u)) +
         non_gaussian_terms(model, u).value;
}

LatentState map_estimate(const GraphModel& model, const Vector& u0, const MapOptions& options) {
  require(u0.size() == model.n(), ErrorKind::input, "initial vector length differs from graph size");
  if (!model.connected())
    fail(ErrorKind::singular_prior, "MAP estimation needs a connected graph");
  LatentState s;
  s.u = project_zero_mean(u0);
  for (s.iterations = 0;; ++s.iterations) {
    const PhiValue ng = non_gaussian_terms(model, s.u);
    const Vector lu = fractional_laplacian_apply(model, model.alpha(), s.u);
    s.objective = 0.5 * s.u.dot(lu) + ng.value;
    s.gradient = project_zero_mean(lu + ng.gradient);
    const double gnorm = s.gradient.norm();
    if (gnorm <= options.tol) return s;
    if (s.iterations >= options.max_iter)
      fail(ErrorKind::optimization, "MAP descent stopped after " + std::to_string(s.iterations) +
                                        " iterations with gradient norm " + std::to_string(gnorm));
    const Vector d = -fractional_laplacian_apply(model, -model.alpha(), s.gradient);
    const double slope = s.gradient.dot(d);
    const double slack = 1e-14 * (1.0 + std::abs(s.objective));
    double step = 1.0;
    Vector trial;
    while (true) {
      trial = project_zero_mean(s.u + step * d);
      const double f = map_objective(model, trial);
      if (f <= s.objective + 1e-4 * step * slope) break;
      // Near the minimum the decrease drowns in rounding; fall back on the
      // directional derivative, which stays accurate.
      if (std::abs(f - s.objective) <= slack) {
        const Vector g = fractional_laplacian_apply(model, model.alpha(), trial) +
                         non_gaussian_terms(model, trial).gradient;
        if (std::abs(project_zero_mean(g).dot(d)) <= 0.9 * std::abs(slope)) break;
      }
      step *= 0.5;
      if (step < 1e-20)
        fail(ErrorKind::optimization, "line search failed with gradient norm " + std::to_string(gnorm));
    }
    s.u = trial;
  }
}

Vector precond_langevin_step(const Vector& x, const GraphModel& model, double dt,
                             const CounterRng& rng, std::uint64_t stream, std::uint64_t step) {
  require(std::isfinite(dt) && dt > 0.0, ErrorKind::input, "dt must be positive");
  require(x.size() == model.n(), ErrorKind::input, "state length differs from graph size");
  const Vector grad = project_zero_mean(non_gaussian_terms(model, x).gradient);
  const Vector drift = x + fractional_laplacian_apply(model, -model.alpha(), grad);
  require(drift.allFinite(), ErrorKind::divergence, "non-finite preconditioned drift");
  Vector xi(model.n());
  rng.normals(stream, step, std::span<double>(xi.data(), static_cast<std::size_t>(xi.size())));
  const Vector noise = fractional_laplacian_apply(model, -0.5 * model.alpha(), project_zero_mean(xi));
  return project_zero_mean(x - drift * dt + std::sqrt(2.0 * dt) * noise);
}

Vector sample_prior(const GraphModel& model, const CounterRng& rng, std::uint64_t stream,
                    std::uint64_t step) {
  Vector xi(model.n());
  rng.normals(stream, step, std::span<double>(xi.data(), static_cast<std::size_t>(xi.size())));
  return fractional_laplacian_apply(model, -0.5 * model.alpha(), project_zero_mean(xi));
}

LabelSummary posterior_label_summary(const std::vector<Vector>& states) {
  require(!states.empty(), ErrorKind::input, "label summary needs at least one state");
  const Eigen::Index n = states.front().size();
  LabelSummary s;
  s.prob_plus.assign(static_cast<std::size_t>(n), 0.0);
  for (const Vector& u : states) {
    require(u.size() == n, ErrorKind::input, "states have different lengths");
    for (Eigen::Index i = 0; i < n; ++i)
      if (u[i] > 0.0) s.prob_plus[static_cast<std::size_t>(i)] += 1.0;
  }
  const double count = static_cast<double>(states.size());
  s.std_error.resize(s.prob_plus.size());
  for (std::size_t i = 0; i < s.prob_plus.size(); ++i) {
    s.prob_plus[i] /= count;
    s.std_error[i] = std::sqrt(s.prob_plus[i] * (1.0 - s.prob_plus[i]) / count);
  }
  return s;
}

BayesModel projected_posterior(const GraphModel& model, const std::vector<int>& modes, const Box& domain) {
  require(!modes.empty(), ErrorKind::input, "projection needs at least one mode");
  const auto k = static_cast<Eigen::Index>(modes.size());
  Matrix v(model.n(), k);
  Vector prec(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    const int m = modes[static_cast<std::size_t>(c)];
    require(m >= 0 && m < model.n() - 1, ErrorKind::input, "projection mode out of range");
    v.col(c) = model.eigenvectors().col(m);
    prec[c] = std::pow(model.eigenvalues()[m], model.alpha());
  }
  const auto shared = std::make_shared<const GraphModel>(model);
  // Splits the non-Gaussian terms into the double-well (prior) and data parts.
  auto part = [v, shared](bool prior_side) {
    auto value = [v, shared, prior_side](const Vector& c) {
      const GraphModel& g = *shared;
      const Vector u = v * c;
      if (g.likelihood() == Likelihood::gl) {
        const GlTerms t = gl_potentials(u, g.labeled(), g.labels(), g.gamma(), g.epsilon());
        return prior_side ? t.prior_extra.value : t.phi.value;
      }
      return prior_side ? 0.0 : non_gaussian_terms(g, u).value;
    };
    auto gradient = [v, shared, prior_side](const Vector& c) -> Vector {
      const GraphModel& g = *shared;
      const Vector u = v * c;
      if (g.likelihood() == Likelihood::gl) {
        const GlTerms t = gl_potentials(u, g.labeled(), g.labels(), g.gamma(), g.epsilon());
        return v.transpose() * (prior_side ? t.prior_extra.gradient : t.phi.gradient);
      }
      return prior_side ? Vector::Zero(v.cols()) : Vector(v.transpose() * non_gaussian_terms(g, u).gradient);
    };
    auto hessian = [v, shared, prior_side](const Vector& c) -> Matrix {
      const GraphModel& g = *shared;
      const Vector u = v * c;
      Vector d = Vector::Zero(u.size());
      if (g.likelihood() == Likelihood::gl) {
        for (int j : g.labeled())
          d[j] = prior_side ? (3.0 * u[j] * u[j] - 1.0) / g.epsilon() : 1.0 / (g.gamma() * g.gamma());
      } else if (!prior_side) {
        d = non_gaussian_hessian_diag(g, u);
      }
      return v.transpose() * d.asDiagonal() * v;
    };
    return PotentialField(static_cast<int>(v.cols()), value, gradient, hessian);
  };
  const PotentialField gaussian = PotentialField::quadratic(prec.asDiagonal().toDenseMatrix());
  return BayesModel(gaussian + part(true), part(false), catalog::euclidean(static_cast<int>(k)), domain);
}

double precond_convexity(const GraphModel& model, const std::vector<Vector>& points) {
  require(!points.empty(), ErrorKind::input, "no sample points");
  if (!model.connected()) fail(ErrorKind::singular_prior, "graph is disconnected");
  const Matrix& v = model.eigenvectors();
  Vector inv_sqrt(model.eigenvalues().size());
  for (Eigen::Index k = 0; k < inv_sqrt.size(); ++k)
    inv_sqrt[k] = std::pow(model.eigenvalues()[k], -0.5 * model.alpha());
  double best = std::numeric_limits<double>::infinity();
  for (const Vector& p : points) {
    const Vector u = project_zero_mean(p);
    const Vector h = non_gaussian_hessian_diag(model, u);
    Matrix q = inv_sqrt.asDiagonal() * (v.transpose() * h.asDiagonal() * v) * inv_sqrt.asDiagonal();
    q += Matrix::Identity(q.rows(), q.cols());
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (q + q.transpose()), Eigen::EigenvaluesOnly);
    best = std::min(best, es.eigenvalues()[0]);
  }
  return best;
}

void write_vector_csv(std::ostream& os, const std::string& header, const Vector& v) {
  os << "node," << header << '\n';
  char buf[64];
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%td,%.17g\n", static_cast<std::ptrdiff_t>(i), v[i]);
    os << buf;
  }
}

void write_label_summary_csv(std::ostream& os, const LabelSummary& summary) {
  os << "node,prob_plus,std_error\n";
  char buf[96];
  for (std::size_t i = 0; i < summary.prob_plus.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", i, summary.prob_plus[i], summary.std_error[i]);
    os << buf;
  }
}

}  // namespace bayesflow

#include "bayesflow/spectral.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "bayesflow/error.hpp"
#include "json.hpp"

namespace bayesflow {

WeightedLaplacianOperator::WeightedLaplacianOperator(Grid grid, std::vector<double> mu,
                                                     std::vector<Face> faces,
                                                     std::vector<double> face_weights)
    : grid_(std::move(grid)), mu_(std::move(mu)), faces_(std::move(faces)),
      face_weights_(std::move(face_weights)) {
  require(mu_.size() == grid_.size() && faces_.size() == face_weights_.size(),
          ErrorKind::assembly, "operator data sizes are inconsistent");
  const auto w = grid_.weights();
  mass_.resize(mu_.size());
  for (std::size_t i = 0; i < mu_.size(); ++i) mass_[i] = w[i] * mu_[i];
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(4 * faces_.size());
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    const auto a = static_cast<int>(faces_[f].a);
    const auto b = static_cast<int>(faces_[f].b);
    const double s = face_weights_[f];
    t.emplace_back(a, a, s);
    t.emplace_back(b, b, s);
    t.emplace_back(a, b, -s);
    t.emplace_back(b, a, -s);
  }
  const auto n = static_cast<Eigen::Index>(mu_.size());
  stiffness_.resize(n, n);
  stiffness_.setFromTriplets(t.begin(), t.end());
}

std::vector<double> WeightedLaplacianOperator::apply(const std::vector<double>& f) const {
  require(f.size() == size(), ErrorKind::grid_mismatch, "function size differs from operator");
  std::vector<double> acc(f.size(), 0.0);
  for (std::size_t k = 0; k < faces_.size(); ++k) {
    const double flux = face_weights_[k] * (f[faces_[k].a] - f[faces_[k].b]);
    acc[faces_[k].a] += flux;
    acc[faces_[k].b] -= flux;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = mass_[i] > 0.0 ? acc[i] / mass_[i] : 0.0;
  return acc;
}

double WeightedLaplacianOperator::dirichlet_form(const std::vector<double>& f) const {
  require(f.size() == size(), ErrorKind::grid_mismatch, "function size differs from operator");
  double acc = 0.0;
  for (std::size_t k = 0; k < faces_.size(); ++k) {
    const double d = f[faces_[k].b] - f[faces_[k].a];
    acc += face_weights_[k] * d * d;
  }
  return acc;
}

double WeightedLaplacianOperator::inner(const std::vector<double>& f,
                                        const std::vector<double>& h) const {
  require(f.size() == size() && h.size() == size(), ErrorKind::grid_mismatch,
          "function size differs from operator");
  double acc = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) acc += mass_[i] * f[i] * h[i];
  return acc;
}

double WeightedLaplacianOperator::mean(const std::vector<double>& f) const {
  const double total = std::accumulate(mass_.begin(), mass_.end(), 0.0);
  return inner(f, std::vector<double>(f.size(), 1.0)) / total;
}

int WeightedLaplacianOperator::components(std::vector<int>& label) const {
  std::vector<std::size_t> parent(size());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t k = 0; k < faces_.size(); ++k) {
    if (!(face_weights_[k] > 0.0)) continue;
    const std::size_t ra = find(faces_[k].a), rb = find(faces_[k].b);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  label.assign(size(), -1);
  std::vector<int> root_label(size(), -1);
  int count = 0;
  for (std::size_t i = 0; i < size(); ++i) {
    if (!(mass_[i] > 0.0)) continue;
    const std::size_t r = find(i);
    if (root_label[r] < 0) root_label[r] = count++;
    label[i] = root_label[r];
  }
  return count;
}

WeightedLaplacianOperator assemble_weighted_laplacian(const BayesModel& model, const Grid& grid) {
  grid.validate();
  const auto psi = model.prior_values(grid);
  const auto phi = model.likelihood_values(grid);
  const auto lv = model.log_volume_values(grid);
  std::vector<double> lw(psi.size());
  std::string bad;
  for (std::size_t i = 0; i < lw.size(); ++i) {
    lw[i] = -psi[i] - phi[i] + lv[i];
    if (std::isnan(lw[i]) || lw[i] == std::numeric_limits<double>::infinity())
      bad += (bad.empty() ? "" : ", ") + std::to_string(i);
  }
  if (!bad.empty()) fail(ErrorKind::assembly, "non-finite potential values at nodes " + bad);
  const double top = *std::max_element(lw.begin(), lw.end());
  require(std::isfinite(top), ErrorKind::assembly, "posterior vanishes on the whole grid");
  const auto w = grid.weights();
  double total = 0.0;
  for (std::size_t i = 0; i < lw.size(); ++i) total += w[i] * std::exp(lw[i] - top);
  const double shift = top + std::log(total);
  std::vector<double> log_mu(lw.size()), mu(lw.size());
  for (std::size_t i = 0; i < lw.size(); ++i) {
    log_mu[i] = lw[i] - shift;
    mu[i] = std::exp(log_mu[i]);
  }
  auto faces = build_faces(grid, model.metric());
  std::vector<double> weights(faces.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const double la = log_mu[faces[f].a], lb = log_mu[faces[f].b];
    weights[f] = (std::isinf(la) || std::isinf(lb)) ? 0.0 : faces[f].coef * log_mean_exp(la, lb);
  }
  return WeightedLaplacianOperator(grid, std::move(mu), std::move(faces), std::move(weights));
}

namespace {

double residual_of(const WeightedLaplacianOperator& op, const std::vector<double>& f, double lambda) {
  const auto af = op.apply(f);
  double acc = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double r = af[i] - lambda * f[i];
    acc += op.mu_weights()[i] * r * r;
  }
  return std::sqrt(acc);
}

void center_and_normalize(const WeightedLaplacianOperator& op, std::vector<double>& f) {
  const double m = op.mean(f);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = op.mu_weights()[i] > 0.0 ? f[i] - m : 0.0;
  const double norm = std::sqrt(op.inner(f, f));
  require(norm > 0.0, ErrorKind::convergence, "iterate collapsed to a constant");
  for (double& v : f) v /= norm;
}

// Deterministic sign: positive correlation with the first coordinate.
void fix_sign(const WeightedLaplacianOperator& op, std::vector<double>& f) {
  std::vector<double> x(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) x[i] = op.grid().node(i)[0];
  double c = op.inner(f, x);
  if (c == 0.0) {
    for (double v : f)
      if (v != 0.0) {
        c = v;
        break;
      }
  }
  if (c < 0.0)
    for (double& v : f) v = -v;
}

SpectralResult disconnected_gap(const WeightedLaplacianOperator& op, const std::vector<int>& label,
                                int count) {
  std::vector<double> comp_mass(static_cast<std::size_t>(count), 0.0);
  for (std::size_t i = 0; i < label.size(); ++i)
    if (label[i] >= 0) comp_mass[static_cast<std::size_t>(label[i])] += op.mu_weights()[i];
  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return comp_mass[static_cast<std::size_t>(a)] > comp_mass[static_cast<std::size_t>(b)];
  });
  const int c1 = order[0], c2 = order[1];
  const double m1 = comp_mass[static_cast<std::size_t>(c1)], m2 = comp_mass[static_cast<std::size_t>(c2)];
  const double a = std::sqrt(m2 / (m1 * (m1 + m2)));
  const double b = std::sqrt(m1 / (m2 * (m1 + m2)));
  SpectralResult r;
  r.eigenfunction.assign(op.size(), 0.0);
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (label[i] == c1) r.eigenfunction[i] = a;
    if (label[i] == c2) r.eigenfunction[i] = -b;
  }
  fix_sign(op, r.eigenfunction);
  r.lambda2 = 0.0;
  r.residual = residual_of(op, r.eigenfunction, 0.0);
  return r;
}

}  // namespace

SpectralResult spectral_gap(const WeightedLaplacianOperator& op, const SpectralOptions& options) {
  std::vector<int> label;
  const int count = op.components(label);
  require(count >= 1, ErrorKind::assembly, "operator has no active node");
  if (count > 1) return disconnected_gap(op, label, count);

  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < op.size(); ++i)
    if (label[i] >= 0) active.push_back(i);
  require(active.size() >= 2, ErrorKind::assembly, "operator needs at least two active nodes");
  // Pin the heaviest node; pinning a node in a far tail leaves the reduced
  // stiffness matrix nearly singular.
  std::size_t heaviest = 0;
  for (std::size_t j = 1; j < active.size(); ++j)
    if (op.mu_weights()[active[j]] > op.mu_weights()[active[heaviest]]) heaviest = j;
  std::swap(active[0], active[heaviest]);
  std::vector<long> slot(op.size(), -1);
  for (std::size_t j = 1; j < active.size(); ++j) slot[active[j]] = static_cast<long>(j - 1);
  const auto n = static_cast<Eigen::Index>(active.size() - 1);
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t k = 0; k < op.faces().size(); ++k) {
    const double s = op.face_weights()[k];
    if (!(s > 0.0)) continue;
    const long a = slot[op.faces()[k].a], b = slot[op.faces()[k].b];
    if (a >= 0) t.emplace_back(a, a, s);
    if (b >= 0) t.emplace_back(b, b, s);
    if (a >= 0 && b >= 0) {
      t.emplace_back(a, b, -s);
      t.emplace_back(b, a, -s);
    }
  }
  Eigen::SparseMatrix<double> k(n, n);
  k.setFromTriplets(t.begin(), t.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(k);
  require(solver.info() == Eigen::Success, ErrorKind::convergence,
          "pinned stiffness factorization failed");

  std::vector<double> f(op.size(), 0.0);
  for (std::size_t i : active) {
    const Vector x = op.grid().node(i);
    f[i] = x[0] + (x.size() > 1 ? 0.37 * x[1] : 0.0);
  }
  center_and_normalize(op, f);
  SpectralResult r;
  double lambda = op.dirichlet_form(f);
  double res = residual_of(op, f, lambda);
  int it = 0;
  Eigen::VectorXd rhs(n);
  while (res > options.tol && it < options.max_iter) {
    for (std::size_t j = 1; j < active.size(); ++j)
      rhs[static_cast<Eigen::Index>(j - 1)] = op.mu_weights()[active[j]] * f[active[j]];
    const Eigen::VectorXd x = solver.solve(rhs);
    std::fill(f.begin(), f.end(), 0.0);
    for (std::size_t j = 1; j < active.size(); ++j) f[active[j]] = x[static_cast<Eigen::Index>(j - 1)];
    center_and_normalize(op, f);
    lambda = op.dirichlet_form(f);
    res = residual_of(op, f, lambda);
    ++it;
  }
  if (res > options.tol)
    fail(ErrorKind::convergence, "inverse iteration did not converge; last residual " +
                                     std::to_string(res));
  fix_sign(op, f);
  r.lambda2 = lambda;
  r.eigenfunction = std::move(f);
  r.residual = res;
  r.n_iter = it;
  return r;
}

SpectralResult dense_spectral_gap(const WeightedLaplacianOperator& op) {
  std::vector<int> label;
  const int count = op.components(label);
  require(count >= 1, ErrorKind::assembly, "operator has no active node");
  if (count > 1) return disconnected_gap(op, label, count);
  std::vector<std::size_t> active;
  std::vector<long> slot(op.size(), -1);
  for (std::size_t i = 0; i < op.size(); ++i)
    if (label[i] >= 0) {
      slot[i] = static_cast<long>(active.size());
      active.push_back(i);
    }
  require(active.size() <= 2000, ErrorKind::input, "dense eigensolver limited to 2000 nodes");
  const auto n = static_cast<Eigen::Index>(active.size());
  Matrix k = Matrix::Zero(n, n);
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) m(i, i) = op.mu_weights()[active[static_cast<std::size_t>(i)]];
  for (std::size_t f = 0; f < op.faces().size(); ++f) {
    const long a = slot[op.faces()[f].a], b = slot[op.faces()[f].b];
    if (a < 0 || b < 0) continue;
    const double s = op.face_weights()[f];
    k(a, a) += s;
    k(b, b) += s;
    k(a, b) -= s;
    k(b, a) -= s;
  }
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> es(k, m);
  require(es.info() == Eigen::Success, ErrorKind::convergence, "dense eigensolver failed");
  SpectralResult r;
  r.lambda2 = es.eigenvalues()[1];
  r.eigenfunction.assign(op.size(), 0.0);
  for (Eigen::Index i = 0; i < n; ++i)
    r.eigenfunction[active[static_cast<std::size_t>(i)]] = es.eigenvectors()(i, 1);
  center_and_normalize(op, r.eigenfunction);
  fix_sign(op, r.eigenfunction);
  r.residual = residual_of(op, r.eigenfunction, r.lambda2);
  return r;
}

std::string spectral_json(const SpectralResult& result) {
  nlohmann::json j;
  j["lambda2"] = result.lambda2;
  j["residual"] = result.residual;
  j["n_iter"] = result.n_iter;
  return j.dump();
}

PoincareReport poincare_convexity_check(const WeightedLaplacianOperator& op,
                                        const std::vector<std::vector<double>>& trials,
                                        const SpectralResult& gap) {
  PoincareReport rep;
  rep.lambda2 = gap.lambda2;
  rep.trial_count = trials.size();
  rep.min_poincare_slack = std::numeric_limits<double>::infinity();
  rep.min_convexity_slack = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& f = trials[i];
    const double norm2 = op.inner(f, f);
    if (std::abs(op.mean(f)) > 1e-10 * std::max(1.0, std::sqrt(norm2)))
      fail(ErrorKind::input, "trial function " + std::to_string(i) + " is not mu-mean zero");
    const double slack = op.dirichlet_form(f) + 1e-8 - gap.lambda2 * norm2;
    rep.min_poincare_slack = std::min(rep.min_poincare_slack, slack);
    if (slack < 0.0) rep.poincare_holds = false;
  }
  std::vector<std::vector<double>> diffs;
  for (std::size_t i = 0; i + 1 < trials.size(); i += 2) {
    const auto& f0 = trials[i];
    const auto& f1 = trials[i + 1];
    std::vector<double> d(f0.size()), g0(f0.size()), g1(f0.size());
    for (std::size_t j = 0; j < d.size(); ++j) {
      d[j] = f0[j] - f1[j];
      g0[j] = 1.0 + f0[j];
      g1[j] = 1.0 + f1[j];
    }
    const double d0 = op.dirichlet_form(f0), d1 = op.dirichlet_form(f1), dd = op.dirichlet_form(d);
    const double n2 = op.inner(d, d);
    const double e0 = op.dirichlet_form(g0), e1 = op.dirichlet_form(g1);
    for (double t : {0.25, 0.5, 0.75}) {
      std::vector<double> mix(d.size()), gmix(d.size());
      for (std::size_t j = 0; j < d.size(); ++j) {
        mix[j] = t * f0[j] + (1.0 - t) * f1[j];
        gmix[j] = t * g0[j] + (1.0 - t) * g1[j];
      }
      const double lhs = op.dirichlet_form(mix) + t * (1.0 - t) * dd;
      const double rhs = t * d0 + (1.0 - t) * d1;
      const double err = std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs));
      rep.max_parallelogram_error = std::max(rep.max_parallelogram_error, err);
      if (err > 1e-10) rep.parallelogram_holds = false;
      const double slack = t * e0 + (1.0 - t) * e1 + 1e-8 -
                           (op.dirichlet_form(gmix) + gap.lambda2 * t * (1.0 - t) * n2);
      rep.min_convexity_slack = std::min(rep.min_convexity_slack, slack);
      if (slack < 0.0) rep.convexity_holds = false;
    }
    diffs.push_back(std::move(d));
  }
  if (!diffs.empty()) {
    // Rayleigh-Ritz for min D(g)/|g|^2 over span(diffs).
    const auto q = static_cast<Eigen::Index>(diffs.size());
    Matrix a(q, q), b(q, q);
    std::vector<std::vector<double>> kd(diffs.size());
    for (std::size_t i = 0; i < diffs.size(); ++i) {
      const auto ad = op.apply(diffs[i]);
      kd[i].resize(ad.size());
      for (std::size_t j = 0; j < ad.size(); ++j) kd[i][j] = ad[j];
    }
    for (Eigen::Index i = 0; i < q; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) {
        const auto si = static_cast<std::size_t>(i), sj = static_cast<std::size_t>(j);
        a(i, j) = a(j, i) = 0.5 * (op.inner(diffs[si], kd[sj]) + op.inner(diffs[sj], kd[si]));
        b(i, j) = b(j, i) = op.inner(diffs[si], diffs[sj]);
      }
    Eigen::SelfAdjointEigenSolver<Matrix> bs(b);
    const double cutoff = 1e-12 * bs.eigenvalues().maxCoeff();
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < q; ++i)
      if (bs.eigenvalues()[i] > cutoff) keep.push_back(i);
    // Identical pairs constrain nothing.
    if (keep.empty()) {
      rep.best_convexity_constant = std::numeric_limits<double>::infinity();
      return rep;
    }
    Matrix basis(q, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c)
      basis.col(static_cast<Eigen::Index>(c)) =
          bs.eigenvectors().col(keep[c]) / std::sqrt(bs.eigenvalues()[keep[c]]);
    const Matrix reduced = basis.transpose() * a * basis;
    Eigen::SelfAdjointEigenSolver<Matrix> rs(0.5 * (reduced + reduced.transpose()));
    rep.best_convexity_constant = 2.0 * rs.eigenvalues()[0];
  }
  return rep;
}

PoincareReport poincare_convexity_check(const WeightedLaplacianOperator& op,
                                        const std::vector<std::vector<double>>& trials) {
  return poincare_convexity_check(op, trials, spectral_gap(op));
}

std::vector<double> convex_envelope_1d(const std::vector<double>& w) {
  require(w.size() >= 2, ErrorKind::input, "convex envelope needs at least 2 samples");
  for (double v : w) require(std::isfinite(v), ErrorKind::input, "envelope samples must be finite");
  std::vector<std::size_t> hull;
  auto cross = [&](std::size_t o, std::size_t a, std::size_t b) {
    const double ax = static_cast<double>(a) - static_cast<double>(o), ay = w[a] - w[o];
    const double bx = static_cast<double>(b) - static_cast<double>(o), by = w[b] - w[o];
    return ax * by - ay * bx;
  };
  for (std::size_t i = 0; i < w.size(); ++i) {
    while (hull.size() >= 2 && cross(hull[hull.size() - 2], hull.back(), i) < 0.0) hull.pop_back();
    hull.push_back(i);
  }
  std::vector<double> env(w.size());
  for (std::size_t h = 0; h + 1 < hull.size(); ++h) {
    const std::size_t a = hull[h], b = hull[h + 1];
    env[a] = w[a];
    for (std::size_t i = a + 1; i < b; ++i) {
      const double s = static_cast<double>(i - a) / static_cast<double>(b - a);
      env[i] = std::min(w[i], (1.0 - s) * w[a] + s * w[b]);
    }
  }
  env[hull.back()] = w[hull.back()];
  return env;
}

double gl_poincare_bound(int k, double epsilon, double lambda_min_L, double alpha) {
  require(k >= 0, ErrorKind::numeric_domain, "label count k must be nonnegative");
  require(epsilon > 0.0 && lambda_min_L > 0.0 && alpha > 0.0, ErrorKind::numeric_domain,
          "epsilon, lambda_min(L) and alpha must be positive");
  return std::exp(-static_cast<double>(k) / epsilon) * std::pow(lambda_min_L, alpha);
}

}  // namespace bayesflow

#include "bayesflow/metric_geometry.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "bayesflow/error.hpp"
#include "bayesflow/parallel.hpp"

namespace bayesflow {

double fd_step(const Vector& x) {
  const double scale = x.size() ? x.cwiseAbs().maxCoeff() : 0.0;
  return std::max(1e-5, 1e-5 * scale);
}

namespace {

// Second differences lose roughly eps / h^2, so they use a wider step.
double fd_step2(const Vector& x) {
  const double scale = x.size() ? x.cwiseAbs().maxCoeff() : 0.0;
  return std::max(1e-4, 1e-4 * scale);
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

// ---------------------------------------------------------------- Box

Box Box::cube(int dim, double lo, double hi) {
  return Box(Vector::Constant(dim, lo), Vector::Constant(dim, hi));
}

void Box::validate() const {
  require(lower.size() > 0 && lower.size() == upper.size(), ErrorKind::invalid_domain,
          "box bounds must be non-empty and of equal dimension");
  for (int i = 0; i < dim(); ++i) {
    require(std::isfinite(lower[i]) && std::isfinite(upper[i]), ErrorKind::invalid_domain,
            "box bounds must be finite");
    require(upper[i] > lower[i], ErrorKind::invalid_domain,
            "box is degenerate along axis " + std::to_string(i));
  }
}

bool Box::contains(const Vector& x, double slack) const {
  for (int i = 0; i < dim(); ++i)
    if (x[i] < lower[i] - slack || x[i] > upper[i] + slack) return false;
  return true;
}

// ---------------------------------------------------------------- MetricField

MetricField::MetricField(int dim, Eval eval, FirstDerivatives d1, SecondDerivatives d2)
    : dim_(dim), eval_(std::move(eval)), d1_(std::move(d1)), d2_(std::move(d2)) {
  require(dim_ > 0, ErrorKind::input, "metric dimension must be positive");
}

MetricField MetricField::constant(const Matrix& g) {
  require(g.rows() == g.cols() && g.rows() > 0, ErrorKind::input, "metric must be square");
  const int m = static_cast<int>(g.rows());
  auto zeros = [m](int count) { return std::vector<Matrix>(count, Matrix::Zero(m, m)); };
  MetricField field(
      m, [g](const Vector&) { return g; }, [zeros, m](const Vector&) { return zeros(m); },
      [zeros, m](const Vector&) { return zeros(m * m); });
  field.constant_ = true;
  return field;
}

DerivativeMode MetricField::mode() const {
  return (d1_ && d2_) ? DerivativeMode::analytic : DerivativeMode::finite_difference;
}

MetricField MetricField::finite_difference() const {
  MetricField out(dim_, eval_);
  out.constant_ = constant_;
  return out;
}

MetricField MetricField::scaled(double a) const {
  require(a > 0.0, ErrorKind::input, "metric scale must be positive");
  auto eval = eval_;
  MetricField out(dim_, [eval, a](const Vector& x) -> Matrix { return a * eval(x); });
  if (d1_) {
    auto d1 = d1_;
    out.d1_ = [d1, a](const Vector& x) {
      auto v = d1(x);
      for (auto& m : v) m *= a;
      return v;
    };
  }
  if (d2_) {
    auto d2 = d2_;
    out.d2_ = [d2, a](const Vector& x) {
      auto v = d2(x);
      for (auto& m : v) m *= a;
      return v;
    };
  }
  out.constant_ = constant_;
  return out;
}

Matrix MetricField::operator()(const Vector& x) const {
  require(x.size() == dim_, ErrorKind::input, "point dimension does not match metric");
  Matrix g = eval_(x);
  require(g.rows() == dim_ && g.cols() == dim_, ErrorKind::input, "metric has wrong shape");
  require(all_finite(g), ErrorKind::numeric_domain, "metric is not finite");
  const double scale = std::max(g.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  require((g - g.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale, ErrorKind::input,
          "metric is not symmetric");
  return g;
}

std::vector<Matrix> MetricField::first_derivatives(const Vector& x) const {
  if (d1_) {
    auto d = d1_(x);
    for (const auto& m : d)
      require(all_finite(m), ErrorKind::numeric_domain, "metric derivative is not finite");
    return d;
  }
  const double h = fd_step(x);
  std::vector<Matrix> out;
  out.reserve(dim_);
  for (int k = 0; k < dim_; ++k) {
    Vector xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    Matrix d = ((*this)(xp) - (*this)(xm)) / (2.0 * h);
    require(all_finite(d), ErrorKind::numeric_domain, "metric derivative is not finite");
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Matrix> MetricField::second_derivatives(const Vector& x) const {
  if (d2_) {
    auto d = d2_(x);
    for (const auto& m : d)
      require(all_finite(m), ErrorKind::numeric_domain, "metric derivative is not finite");
    return d;
  }
  const double h = fd_step2(x);
  std::vector<Matrix> out(static_cast<std::size_t>(dim_ * dim_));
  const Matrix g0 = (*this)(x);
  for (int k = 0; k < dim_; ++k) {
    Vector xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    out[k * dim_ + k] = ((*this)(xp) - 2.0 * g0 + (*this)(xm)) / (h * h);
    for (int l = k + 1; l < dim_; ++l) {
      Vector pp = x, pm = x, mp = x, mm = x;
      pp[k] += h; pp[l] += h;
      pm[k] += h; pm[l] -= h;
      mp[k] -= h; mp[l] += h;
      mm[k] -= h; mm[l] -= h;
      Matrix d = ((*this)(pp) - (*this)(pm) - (*this)(mp) + (*this)(mm)) / (4.0 * h * h);
      out[k * dim_ + l] = d;
      out[l * dim_ + k] = std::move(d);
    }
  }
  for (const auto& m : out)
    require(all_finite(m), ErrorKind::numeric_domain, "metric derivative is not finite");
  return out;
}

// ---------------------------------------------------------------- PotentialField

PotentialField::PotentialField(int dim, Value value, Gradient gradient, Hessian hessian)
    : dim_(dim), value_(std::move(value)), gradient_(std::move(gradient)),
      hessian_(std::move(hessian)) {
  require(dim_ > 0, ErrorKind::input, "potential dimension must be positive");
}

PotentialField PotentialField::zero(int dim) {
  return PotentialField(
      dim, [](const Vector&) { return 0.0; },
      [dim](const Vector&) -> Vector { return Vector::Zero(dim); },
      [dim](const Vector&) -> Matrix { return Matrix::Zero(dim, dim); });
}

PotentialField PotentialField::quadratic(const Matrix& a, const Vector& mean) {
  require(a.rows() == a.cols() && a.rows() == mean.size(), ErrorKind::input,
          "quadratic potential shape mismatch");
  const Matrix sym = 0.5 * (a + a.transpose());
  return PotentialField(
      static_cast<int>(a.rows()),
      [sym, mean](const Vector& x) {
        const Vector d = x - mean;
        return 0.5 * d.dot(sym * d);
      },
      [sym, mean](const Vector& x) -> Vector { return sym * (x - mean); },
      [sym](const Vector&) -> Matrix { return sym; });
}

DerivativeMode PotentialField::mode() const {
  return (gradient_ && hessian_) ? DerivativeMode::analytic : DerivativeMode::finite_difference;
}

Vector PotentialField::gradient(const Vector& x) const {
  require(x.size() == dim_, ErrorKind::input, "point dimension does not match potential");
  Vector g;
  if (gradient_) {
    g = gradient_(x);
  } else {
    const double h = fd_step(x);
    g.resize(dim_);
    for (int k = 0; k < dim_; ++k) {
      Vector xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      g[k] = (value_(xp) - value_(xm)) / (2.0 * h);
    }
  }
  require(g.allFinite(), ErrorKind::numeric_domain, "potential gradient is not finite");
  return g;
}

Matrix PotentialField::hessian(const Vector& x) const {
  require(x.size() == dim_, ErrorKind::input, "point dimension does not match potential");
  Matrix hm(dim_, dim_);
  if (hessian_) {
    hm = hessian_(x);
  } else if (gradient_) {
    const double h = fd_step(x);
    for (int k = 0; k < dim_; ++k) {
      Vector xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      hm.col(k) = (gradient_(xp) - gradient_(xm)) / (2.0 * h);
    }
    hm = 0.5 * (hm + hm.transpose()).eval();
  } else {
    const double h = fd_step2(x);
    const double f0 = value_(x);
    for (int k = 0; k < dim_; ++k) {
      Vector xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      hm(k, k) = (value_(xp) - 2.0 * f0 + value_(xm)) / (h * h);
      for (int l = k + 1; l < dim_; ++l) {
        Vector pp = x, pm = x, mp = x, mm = x;
        pp[k] += h; pp[l] += h;
        pm[k] += h; pm[l] -= h;
        mp[k] -= h; mp[l] += h;
        mm[k] -= h; mm[l] -= h;
        hm(k, l) = hm(l, k) =
            (value_(pp) - value_(pm) - value_(mp) + value_(mm)) / (4.0 * h * h);
      }
    }
  }
  require(hm.allFinite(), ErrorKind::numeric_domain, "potential Hessian is not finite");
  return hm;
}

PotentialField PotentialField::finite_difference() const { return PotentialField(dim_, value_); }

PotentialField operator+(const PotentialField& a, const PotentialField& b) {
  require(a.dim_ == b.dim_, ErrorKind::input, "potential dimensions differ");
  PotentialField out(a.dim_, [a, b](const Vector& x) { return a.value(x) + b.value(x); });
  if (a.gradient_ && b.gradient_)
    out.gradient_ = [a, b](const Vector& x) -> Vector { return a.gradient(x) + b.gradient(x); };
  if (a.hessian_ && b.hessian_)
    out.hessian_ = [a, b](const Vector& x) -> Matrix { return a.hessian(x) + b.hessian(x); };
  return out;
}

PotentialField PotentialField::scaled(double s) const {
  PotentialField self = *this;
  PotentialField out(dim_, [self, s](const Vector& x) { return s * self.value(x); });
  if (gradient_) out.gradient_ = [self, s](const Vector& x) -> Vector { return s * self.gradient(x); };
  if (hessian_) out.hessian_ = [self, s](const Vector& x) -> Matrix { return s * self.hessian(x); };
  return out;
}

// ---------------------------------------------------------------- geometry

namespace {

Matrix checked_inverse(const Matrix& g) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(g);
  require(es.info() == Eigen::Success, ErrorKind::numeric_domain, "eigensolver failed on metric");
  const Vector& ev = es.eigenvalues();
  require(ev.allFinite(), ErrorKind::numeric_domain, "metric eigenvalues are not finite");
  const double top = ev.maxCoeff();
  if (!(top > 0.0) || ev.minCoeff() <= 1e-12 * top) {
    std::ostringstream os;
    os << "metric is not positive definite (eigenvalues " << ev.transpose() << ")";
    fail(ErrorKind::singular_metric, os.str());
  }
  return es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

struct Connection {
  ChristoffelData gamma;
  // dgamma[((l * m + a) * m + i) * m + j] = d/dx_l Gamma^a_{ij}
  std::vector<double> dgamma;
};

ChristoffelData gamma_from(int m, const Vector& x, const Matrix& ginv,
                           const std::vector<Matrix>& dg) {
  ChristoffelData out;
  out.point = x;
  out.dim = m;
  out.gamma.assign(static_cast<std::size_t>(m * m * m), 0.0);
  for (int a = 0; a < m; ++a)
    for (int i = 0; i < m; ++i)
      for (int j = i; j < m; ++j) {
        double s = 0.0;
        for (int k = 0; k < m; ++k)
          s += ginv(a, k) * (dg[j](k, i) + dg[i](k, j) - dg[k](i, j));
        out(a, i, j) = out(a, j, i) = 0.5 * s;
      }
  return out;
}

Connection connection(const MetricField& metric, const Vector& x) {
  const int m = metric.dim();
  const Matrix g = metric(x);
  const Matrix ginv = checked_inverse(g);
  const auto dg = metric.first_derivatives(x);
  const auto d2g = metric.second_derivatives(x);

  Connection c{gamma_from(m, x, ginv, dg), {}};
  c.dgamma.assign(static_cast<std::size_t>(m * m * m * m), 0.0);
  for (int l = 0; l < m; ++l) {
    const Matrix dginv = -ginv * dg[l] * ginv;
    for (int a = 0; a < m; ++a)
      for (int i = 0; i < m; ++i)
        for (int j = i; j < m; ++j) {
          double s = 0.0;
          for (int k = 0; k < m; ++k) {
            const double t = dg[j](k, i) + dg[i](k, j) - dg[k](i, j);
            const double dt = d2g[l * m + j](k, i) + d2g[l * m + i](k, j) - d2g[l * m + k](i, j);
            s += dginv(a, k) * t + ginv(a, k) * dt;
          }
          const double v = 0.5 * s;
          c.dgamma[((l * m + a) * m + i) * m + j] = v;
          c.dgamma[((l * m + a) * m + j) * m + i] = v;
        }
  }
  return c;
}

}  // namespace

ChristoffelData christoffel(const MetricField& metric, const Vector& x) {
  const Matrix ginv = checked_inverse(metric(x));
  return gamma_from(metric.dim(), x, ginv, metric.first_derivatives(x));
}

CurvatureMatrices curvature_matrices(const MetricField& metric, const Vector& x) {
  const int m = metric.dim();
  const Connection c = connection(metric, x);
  const auto& gm = c.gamma;
  auto dgam = [&](int l, int a, int i, int j) { return c.dgamma[((l * m + a) * m + i) * m + j]; };

  CurvatureMatrices out{Matrix::Zero(m, m), Matrix::Zero(m, m)};
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      double div = 0.0;    // d_l Gamma^l_ij
      double trace = 0.0;  // d_j Gamma^l_il
      double quad = 0.0;   // Gamma^k_il Gamma^l_jk
      double contr = 0.0;  // Gamma^l_ij Gamma^k_kl
      for (int l = 0; l < m; ++l) {
        div += dgam(l, l, i, j);
        trace += dgam(j, l, i, l);
        for (int k = 0; k < m; ++k) {
          quad += gm(k, i, l) * gm(l, j, k);
          contr += gm(l, i, j) * gm(k, k, l);
        }
      }
      out.b(i, j) = div - quad;
      out.r(i, j) = div - trace + contr - quad;
    }
  return out;
}

Matrix connection_gradient_matrix(const ChristoffelData& gamma, const Vector& grad) {
  const int m = gamma.dim;
  Matrix c = Matrix::Zero(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      double s = 0.0;
      for (int l = 0; l < m; ++l) s += gamma(l, i, j) * grad[l];
      c(i, j) = s;
    }
  return c;
}

Matrix hess_g(const PotentialField& potential, const MetricField& metric, const Vector& x) {
  require(potential.dim() == metric.dim(), ErrorKind::input, "potential/metric dimension mismatch");
  const ChristoffelData gamma = christoffel(metric, x);
  return potential.hessian(x) - connection_gradient_matrix(gamma, potential.gradient(x));
}

Matrix inverse_sqrt_spd(const Matrix& g) {
  require(g.allFinite(), ErrorKind::numeric_domain, "matrix is not finite");
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (g + g.transpose()));
  require(es.info() == Eigen::Success, ErrorKind::numeric_domain, "eigensolver failed");
  const Vector& ev = es.eigenvalues();
  const double top = ev.maxCoeff();
  if (!(top > 0.0) || ev.minCoeff() <= 1e-12 * top)
    fail(ErrorKind::singular_metric, "matrix is not positive definite");
  return es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

// ---------------------------------------------------------------- sampling

namespace {

double radical_inverse(int base, std::uint64_t index) {
  double result = 0.0;
  double f = 1.0 / base;
  while (index > 0) {
    result += f * static_cast<double>(index % base);
    index /= base;
    f /= base;
  }
  return result;
}

constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29};

}  // namespace

std::vector<Vector> sample_points(const Box& box, const Sampler& sampler) {
  box.validate();
  require(sampler.count >= 1, ErrorKind::input, "sampler count must be positive");
  const int m = box.dim();
  std::vector<Vector> pts;
  if (sampler.kind == Sampler::Kind::grid) {
    const int n = sampler.count;
    std::size_t total = 1;
    for (int d = 0; d < m; ++d) total *= static_cast<std::size_t>(n);
    require(total <= 50'000'000, ErrorKind::input, "grid sampler too large");
    pts.reserve(total);
    std::vector<int> idx(m, 0);
    for (std::size_t t = 0; t < total; ++t) {
      Vector x(m);
      for (int d = 0; d < m; ++d) {
        const double s = n == 1 ? 0.5 : static_cast<double>(idx[d]) / (n - 1);
        x[d] = box.lower[d] + s * (box.upper[d] - box.lower[d]);
      }
      pts.push_back(std::move(x));
      for (int d = m - 1; d >= 0; --d) {
        if (++idx[d] < n) break;
        idx[d] = 0;
      }
    }
  } else {
    require(m <= 10, ErrorKind::unsupported_dimension, "halton sampler supports m <= 10");
    pts.reserve(sampler.count);
    for (int t = 0; t < sampler.count; ++t) {
      Vector x(m);
      for (int d = 0; d < m; ++d)
        x[d] = box.lower[d] + radical_inverse(kPrimes[d], static_cast<std::uint64_t>(t) + 1) *
                                  (box.upper[d] - box.lower[d]);
      pts.push_back(std::move(x));
    }
  }
  return pts;
}

// ---------------------------------------------------------------- lambda_G

ConvexityReport min_metric_eigenvalue(const MetricField& metric, const Box& box,
                                      const Sampler& sampler,
                                      const std::function<Matrix(const Vector&)>& form) {
  require(box.dim() == metric.dim(), ErrorKind::invalid_domain,
          "box dimension does not match metric");
  const auto pts = sample_points(box, sampler);
  struct Local {
    double value;
    Vector direction;
  };
  std::vector<Local> local(pts.size());
  parallel_for(pts.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      const Vector& x = pts[p];
      const Matrix s = inverse_sqrt_spd(metric(x));
      Matrix mm = s * form(x) * s;
      mm = 0.5 * (mm + mm.transpose()).eval();
      require(mm.allFinite(), ErrorKind::numeric_domain, "local convexity matrix is not finite");
      Eigen::SelfAdjointEigenSolver<Matrix> es(mm);
      require(es.info() == Eigen::Success, ErrorKind::numeric_domain, "eigensolver failed");
      local[p] = {es.eigenvalues()[0], es.eigenvectors().col(0)};
    }
  });
  ConvexityReport report;
  report.lambda = std::numeric_limits<double>::infinity();
  report.sample_count = static_cast<int>(pts.size());
  report.domain = box;
  for (std::size_t p = 0; p < pts.size(); ++p) {
    if (local[p].value < report.lambda) {
      report.lambda = local[p].value;
      report.argmin_point = pts[p];
      report.argmin_direction = local[p].direction;
    }
  }
  return report;
}

Matrix lambda_g_form(const PotentialField& f, const MetricField& metric, const Vector& x) {
  if (metric.is_constant()) return f.hessian(x);
  const CurvatureMatrices curv = curvature_matrices(metric, x);
  const ChristoffelData gamma = christoffel(metric, x);
  return curv.b + f.hessian(x) - connection_gradient_matrix(gamma, f.gradient(x));
}

ConvexityReport lambda_G(const PotentialField& f, const MetricField& metric, const Box& box,
                         const Sampler& sampler) {
  require(f.dim() == metric.dim(), ErrorKind::input, "potential/metric dimension mismatch");
  return min_metric_eigenvalue(metric, box, sampler,
                               [&](const Vector& x) { return lambda_g_form(f, metric, x); });
}

double drift_lipschitz(const PotentialField& f, const MetricField& metric, const Box& box,
                       const Sampler& sampler) {
  require(f.dim() == metric.dim(), ErrorKind::input, "potential/metric dimension mismatch");
  require(box.dim() == metric.dim(), ErrorKind::invalid_domain,
          "box dimension does not match metric");
  const int m = metric.dim();
  const auto pts = sample_points(box, sampler);
  auto drift = [&](const Vector& x) -> Vector { return metric(x).llt().solve(f.gradient(x)); };
  std::vector<double> norms(pts.size(), 0.0);
  parallel_for(pts.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      const Vector& x = pts[p];
      Matrix jac(m, m);
      if (metric.is_constant() && f.has_analytic_hessian()) {
        jac = metric(x).llt().solve(f.hessian(x));
      } else {
        const double h = fd_step(x);
        for (int k = 0; k < m; ++k) {
          Vector xp = x, xm = x;
          xp[k] += h;
          xm[k] -= h;
          jac.col(k) = (drift(xp) - drift(xm)) / (2.0 * h);
        }
      }
      require(jac.allFinite(), ErrorKind::numeric_domain, "drift Jacobian is not finite");
      Eigen::JacobiSVD<Matrix> svd(jac);
      norms[p] = svd.singularValues()[0];
    }
  });
  double best = 0.0;
  for (double v : norms) best = std::max(best, v);
  return best;
}

PotentialField log_sqrt_det(const MetricField& metric) {
  const int m = metric.dim();
  return PotentialField(
      m, [metric](const Vector& x) { return 0.5 * std::log(metric(x).determinant()); },
      [metric, m](const Vector& x) -> Vector {
        const Matrix ginv = checked_inverse(metric(x));
        const auto dg = metric.first_derivatives(x);
        Vector g(m);
        for (int k = 0; k < m; ++k) g[k] = 0.5 * (ginv * dg[k]).trace();
        return g;
      });
}

}  // namespace bayesflow

#include "bayesflow/catalog.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

#include "bayesflow/error.hpp"

namespace bayesflow::catalog {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& token, const std::string& context) {
  const std::string t = trim(token);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    fail(ErrorKind::config, "not a number '" + t + "' in '" + context + "'");
  }
  if (used != t.size()) fail(ErrorKind::config, "not a number '" + t + "' in '" + context + "'");
  return v;
}

}  // namespace

std::vector<double> Spec::flat() const {
  std::vector<double> out;
  for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

Matrix Spec::matrix() const {
  require(!rows.empty(), ErrorKind::config, name + ": expected a matrix argument");
  const std::size_t n = rows.size();
  // A single row with n*n entries is also accepted as a row-major matrix;
  // a single row of length n is read as a diagonal.
  if (n == 1) {
    const auto& r = rows[0];
    const auto k = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(r.size()))));
    if (k * k == r.size() && k > 1) {
      Matrix m(k, k);
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) m(i, j) = r[i * k + j];
      return m;
    }
    Matrix m = Matrix::Zero(r.size(), r.size());
    for (std::size_t i = 0; i < r.size(); ++i) m(i, i) = r[i];
    return m;
  }
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    require(rows[i].size() == n, ErrorKind::config, name + ": matrix rows must be square");
    for (std::size_t j = 0; j < n; ++j) m(i, j) = rows[i][j];
  }
  return m;
}

double Spec::scalar() const {
  const auto f = flat();
  require(f.size() == 1, ErrorKind::config, name + ": expected one scalar argument");
  return f[0];
}

Spec parse_spec(const std::string& text) {
  const std::string t = trim(text);
  Spec spec;
  const auto open = t.find('(');
  if (open == std::string::npos) {
    spec.name = t;
  } else {
    require(t.back() == ')', ErrorKind::config, "unbalanced parentheses in '" + t + "'");
    spec.name = trim(t.substr(0, open));
    const std::string args = t.substr(open + 1, t.size() - open - 2);
    if (!trim(args).empty()) {
      std::stringstream rows(args);
      std::string row;
      while (std::getline(rows, row, ';')) {
        std::vector<double> values;
        std::stringstream cols(row);
        std::string cell;
        while (std::getline(cols, cell, ',')) values.push_back(parse_number(cell, t));
        spec.rows.push_back(std::move(values));
      }
    }
  }
  require(!spec.name.empty(), ErrorKind::config, "empty name in spec '" + t + "'");
  for (char c : spec.name)
    require(std::isalnum(static_cast<unsigned char>(c)) || c == '_', ErrorKind::config,
            "invalid name in spec '" + t + "'");
  return spec;
}

MetricField euclidean(int dim) { return MetricField::constant(Matrix::Identity(dim, dim)); }

MetricField diag_poly() {
  return MetricField(
      2,
      [](const Vector& x) -> Matrix {
        Matrix g = Matrix::Identity(2, 2);
        g(1, 1) = x[0] * x[0] + 1.0;
        return g;
      },
      [](const Vector& x) {
        std::vector<Matrix> d(2, Matrix::Zero(2, 2));
        d[0](1, 1) = 2.0 * x[0];
        return d;
      },
      [](const Vector&) {
        std::vector<Matrix> d(4, Matrix::Zero(2, 2));
        d[0](1, 1) = 2.0;
        return d;
      });
}

MetricField conformal(double c, int dim) {
  return MetricField(
      dim, [c, dim](const Vector& x) -> Matrix { return std::exp(2.0 * c * x[0]) * Matrix::Identity(dim, dim); },
      [c, dim](const Vector& x) {
        std::vector<Matrix> d(dim, Matrix::Zero(dim, dim));
        d[0] = 2.0 * c * std::exp(2.0 * c * x[0]) * Matrix::Identity(dim, dim);
        return d;
      },
      [c, dim](const Vector& x) {
        std::vector<Matrix> d(dim * dim, Matrix::Zero(dim, dim));
        d[0] = 4.0 * c * c * std::exp(2.0 * c * x[0]) * Matrix::Identity(dim, dim);
        return d;
      });
}

PotentialField gauss_quadratic(const Matrix& sigma, const Vector& mean) {
  require(sigma.rows() == sigma.cols(), ErrorKind::input, "covariance must be square");
  Eigen::LLT<Matrix> llt(sigma);
  require(llt.info() == Eigen::Success, ErrorKind::input, "covariance must be positive definite");
  return PotentialField::quadratic(llt.solve(Matrix::Identity(sigma.rows(), sigma.cols())), mean);
}

PotentialField double_well(int dim) {
  return PotentialField(
      dim,
      [](const Vector& x) {
        double s = 0.0;
        for (int i = 0; i < x.size(); ++i) s += 0.25 * std::pow(x[i] * x[i] - 1.0, 2);
        return s;
      },
      [](const Vector& x) -> Vector {
        Vector g(x.size());
        for (int i = 0; i < x.size(); ++i) g[i] = x[i] * (x[i] * x[i] - 1.0);
        return g;
      },
      [](const Vector& x) -> Matrix {
        Matrix h = Matrix::Zero(x.size(), x.size());
        for (int i = 0; i < x.size(); ++i) h(i, i) = 3.0 * x[i] * x[i] - 1.0;
        return h;
      });
}

PotentialField heavy_tail(int dim) {
  return PotentialField(
      dim,
      [](const Vector& x) {
        double s = 0.0;
        for (int i = 0; i < x.size(); ++i) s += std::pow(1.0 + x[i] * x[i], 0.25);
        return s;
      },
      [](const Vector& x) -> Vector {
        Vector g(x.size());
        for (int i = 0; i < x.size(); ++i) g[i] = 0.5 * x[i] * std::pow(1.0 + x[i] * x[i], -0.75);
        return g;
      },
      [](const Vector& x) -> Matrix {
        Matrix h = Matrix::Zero(x.size(), x.size());
        for (int i = 0; i < x.size(); ++i) {
          const double q = 1.0 + x[i] * x[i];
          h(i, i) = std::pow(q, -1.75) * (0.5 - 0.25 * x[i] * x[i]);
        }
        return h;
      });
}

MetricField make_metric(const Spec& spec, int dim) {
  const auto& n = spec.name;
  if (n == "euclidean") return euclidean(spec.empty() ? dim : static_cast<int>(spec.scalar()));
  if (n == "constant") return MetricField::constant(spec.matrix());
  if (n == "scaled_identity") {
    const double a = spec.scalar();
    require(a > 0.0, ErrorKind::config, "scaled_identity: scale must be positive");
    return MetricField::constant(a * Matrix::Identity(dim, dim));
  }
  if (n == "diag_poly") return diag_poly();
  if (n == "conformal") return conformal(spec.empty() ? 1.0 : spec.scalar(), dim);
  fail(ErrorKind::config, "unknown metric '" + n + "'");
}

PotentialField make_potential(const Spec& spec, int dim) {
  const auto& n = spec.name;
  if (n == "zero") return PotentialField::zero(dim);
  if (n == "gauss_quadratic") {
    const Matrix sigma = spec.matrix();
    return gauss_quadratic(sigma, Vector::Zero(sigma.rows()));
  }
  if (n == "double_well") return double_well(dim);
  if (n == "heavy_tail") return heavy_tail(dim);
  fail(ErrorKind::config, "unknown potential '" + n + "'");
}

std::vector<Entry> entries() {
  return {
      {"metric", "euclidean", "euclidean", "identity metric"},
      {"metric", "constant", "constant(G)", "constant SPD matrix, rows separated by ';'"},
      {"metric", "scaled_identity", "scaled_identity(a)", "a * I"},
      {"metric", "sigma_inverse", "sigma_inverse(a)", "a * Sigma^{-1} of the Gaussian target"},
      {"metric", "diag_poly", "diag_poly", "diag(1, x1^2 + 1) on R^2"},
      {"metric", "conformal", "conformal(c)", "exp(2 c x1) I"},
      {"potential", "zero", "zero", "F = 0"},
      {"potential", "gauss_quadratic", "gauss_quadratic(Sigma)", "0.5 x^T Sigma^{-1} x"},
      {"potential", "double_well", "double_well", "sum (x_i^2 - 1)^2 / 4"},
      {"potential", "heavy_tail", "heavy_tail", "sum (1 + x_i^2)^{1/4}"},
      {"model", "ou", "ou(sigma2)", "1D Gaussian prior N(0, sigma2), flat likelihood"},
      {"model", "gauss", "gauss(Sigma)", "Gaussian prior N(0, Sigma), flat likelihood"},
      {"model", "double_well", "double_well", "prior exp(-(x^2 - 1)^2 / 4), flat likelihood"},
      {"model", "flat", "flat", "uniform prior on the box, flat likelihood"},
      {"model", "flat_quadratic", "flat_quadratic(a)", "uniform prior, likelihood a x^2"},
  };
}

}  // namespace bayesflow::catalog

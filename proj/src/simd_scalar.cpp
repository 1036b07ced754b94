#include <algorithm>

#include "bayesflow/simd.hpp"

namespace bayesflow::simd {

namespace {

double weighted_sum(const double* w, const double* a, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += w[i] * a[i];
  return s;
}

double weighted_dot(const double* w, const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (w[i] * a[i]) * b[i];
  return s;
}

void face_flux(const double* u, const double* a, const double* b, double* face, std::size_t n) {
  if (n == 0) return;
  face[0] = 0.0;
  for (std::size_t k = 1; k < n; ++k) face[k] = a[k] * u[k] - b[k] * u[k - 1];
  face[n] = 0.0;
}

void pme_face_flux(const double* r, const double* p, const double* coef, double* face,
                   std::size_t n) {
  if (n == 0) return;
  face[0] = 0.0;
  for (std::size_t k = 1; k < n; ++k) {
    const double drive = 2.0 * (r[k] - r[k - 1]) + (p[k] - p[k - 1]);
    const double donor = std::max(0.0, drive > 0.0 ? r[k] : r[k - 1]);
    const double mob = std::min(std::max(0.0, 0.5 * (r[k - 1] + r[k])), donor);
    face[k] = (coef[k] * mob) * drive;
  }
  face[n] = 0.0;
}

void flux_divergence(const double* face, const double* inv_vol, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = (face[i + 1] - face[i]) * inv_vol[i];
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + a * x[i];
}

void em_update(double* x, const double* drift, const double* noise, const double* scale,
               double dt, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = (x[i] - drift[i] * dt) + scale[i] * noise[i];
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{Level::scalar, weighted_sum,    weighted_dot, face_flux,
                                 pme_face_flux, flux_divergence, axpy,         em_update};
  return table;
}

}  // namespace bayesflow::simd

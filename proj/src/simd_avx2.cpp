#include <immintrin.h>

#include <algorithm>

#include "simd_kernels_internal.hpp"

namespace bayesflow::simd::detail {

namespace {

// Lanes are folded as ((l0 + l1) + (l2 + l3)), then the scalar tail is added.
inline double hsum(__m256d v) {
  alignas(32) double lane[4];
  _mm256_store_pd(lane, v);
  return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

double weighted_sum(const double* w, const double* a, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(w + i), _mm256_loadu_pd(a + i)));
  double s = hsum(acc);
  for (; i < n; ++i) s += w[i] * a[i];
  return s;
}

double weighted_dot(const double* w, const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d wa = _mm256_mul_pd(_mm256_loadu_pd(w + i), _mm256_loadu_pd(a + i));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(wa, _mm256_loadu_pd(b + i)));
  }
  double s = hsum(acc);
  for (; i < n; ++i) s += (w[i] * a[i]) * b[i];
  return s;
}

void face_flux(const double* u, const double* a, const double* b, double* face, std::size_t n) {
  if (n == 0) return;
  face[0] = 0.0;
  std::size_t k = 1;
  for (; k + 4 <= n; k += 4) {
    const __m256d lhs = _mm256_mul_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(u + k));
    const __m256d rhs = _mm256_mul_pd(_mm256_loadu_pd(b + k), _mm256_loadu_pd(u + k - 1));
    _mm256_storeu_pd(face + k, _mm256_sub_pd(lhs, rhs));
  }
  for (; k < n; ++k) face[k] = a[k] * u[k] - b[k] * u[k - 1];
  face[n] = 0.0;
}

void pme_face_flux(const double* r, const double* p, const double* coef, double* face,
                   std::size_t n) {
  if (n == 0) return;
  face[0] = 0.0;
  const __m256d half = _mm256_set1_pd(0.5);
  const __m256d two = _mm256_set1_pd(2.0);
  const __m256d zero = _mm256_setzero_pd();
  std::size_t k = 1;
  for (; k + 4 <= n; k += 4) {
    const __m256d r0 = _mm256_loadu_pd(r + k - 1);
    const __m256d r1 = _mm256_loadu_pd(r + k);
    const __m256d p0 = _mm256_loadu_pd(p + k - 1);
    const __m256d p1 = _mm256_loadu_pd(p + k);
    const __m256d drive =
        _mm256_add_pd(_mm256_mul_pd(two, _mm256_sub_pd(r1, r0)), _mm256_sub_pd(p1, p0));
    // Operand order mirrors std::max(0.0, x) and std::min(a, b) on NaN and signed zero.
    const __m256d donor =
        _mm256_max_pd(_mm256_blendv_pd(r0, r1, _mm256_cmp_pd(drive, zero, _CMP_GT_OQ)), zero);
    const __m256d mean = _mm256_max_pd(_mm256_mul_pd(half, _mm256_add_pd(r0, r1)), zero);
    const __m256d mob = _mm256_min_pd(donor, mean);
    _mm256_storeu_pd(face + k,
                     _mm256_mul_pd(_mm256_mul_pd(_mm256_loadu_pd(coef + k), mob), drive));
  }
  for (; k < n; ++k) {
    const double drive = 2.0 * (r[k] - r[k - 1]) + (p[k] - p[k - 1]);
    const double donor = std::max(0.0, drive > 0.0 ? r[k] : r[k - 1]);
    const double mob = std::min(std::max(0.0, 0.5 * (r[k - 1] + r[k])), donor);
    face[k] = (coef[k] * mob) * drive;
  }
  face[n] = 0.0;
}

void flux_divergence(const double* face, const double* inv_vol, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(face + i + 1), _mm256_loadu_pd(face + i));
    _mm256_storeu_pd(out + i, _mm256_mul_pd(d, _mm256_loadu_pd(inv_vol + i)));
  }
  for (; i < n; ++i) out[i] = (face[i + 1] - face[i]) * inv_vol[i];
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i),
                                          _mm256_mul_pd(va, _mm256_loadu_pd(x + i))));
  for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

void em_update(double* x, const double* drift, const double* noise, const double* scale,
               double dt, std::size_t n) {
  const __m256d vdt = _mm256_set1_pd(dt);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d det =
        _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_mul_pd(_mm256_loadu_pd(drift + i), vdt));
    const __m256d sto = _mm256_mul_pd(_mm256_loadu_pd(scale + i), _mm256_loadu_pd(noise + i));
    _mm256_storeu_pd(x + i, _mm256_add_pd(det, sto));
  }
  for (; i < n; ++i) x[i] = (x[i] - drift[i] * dt) + scale[i] * noise[i];
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{Level::avx2,  weighted_sum,    weighted_dot, face_flux,
                                 pme_face_flux, flux_divergence, axpy,         em_update};
  return table;
}

}  // namespace bayesflow::simd::detail

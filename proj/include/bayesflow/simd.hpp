#pragma once

// Data-parallel inner loops used by the grid solvers, quadrature and the
// particle samplers. Every kernel has a scalar reference implementation and,
// on x86-64, an AVX2 variant chosen at runtime. Elementwise kernels produce
// bitwise-identical results across levels; reductions differ only by
// summation order.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace bayesflow::simd {

enum class Level { scalar, avx2 };

std::string_view to_string(Level level);

struct KernelTable {
  Level level;

  // sum_i w[i] * a[i]
  double (*weighted_sum)(const double* w, const double* a, std::size_t n);
  // sum_i w[i] * a[i] * b[i]
  double (*weighted_dot)(const double* w, const double* a, const double* b, std::size_t n);
  // Two-point face fluxes on a line of n nodes; face has n + 1 entries.
  // face[k] = a[k] * u[k] - b[k] * u[k-1] for 0 < k < n; face[0] = face[n] = 0.
  void (*face_flux)(const double* u, const double* a, const double* b, double* face,
                    std::size_t n);
  // Degenerate porous-medium face flux, drive d = 2 (r[k] - r[k-1]) + (p[k] - p[k-1]):
  // face[k] = coef[k] * min(max(0, (r[k-1] + r[k]) / 2), max(0, donor)) * d,
  // donor = r[k] if d > 0 else r[k-1]. An empty node never exports mass.
  void (*pme_face_flux)(const double* r, const double* p, const double* coef, double* face,
                        std::size_t n);
  // out[i] = (face[i+1] - face[i]) * inv_vol[i]
  void (*flux_divergence)(const double* face, const double* inv_vol, double* out,
                          std::size_t n);
  // y[i] = y[i] + a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // x[i] = (x[i] - drift[i] * dt) + scale[i] * noise[i]
  void (*em_update)(double* x, const double* drift, const double* noise, const double* scale,
                    double dt, std::size_t n);
};

const KernelTable& scalar_kernels();
/// Null when the AVX2 translation unit was not built.
const KernelTable* avx2_kernels();

bool cpu_supports(Level level);

/// Best level supported by the host, unless overridden by set_level() or the
/// BAYESFLOW_SIMD environment variable ("scalar" or "avx2").
Level active_level();
void set_level(Level level);
const KernelTable& kernels();
const KernelTable& kernels(Level level);

/// Levels usable on this host, scalar first.
std::vector<Level> available_levels();

// Convenience wrappers over the active table.
inline double weighted_sum(std::span<const double> w, std::span<const double> a) {
  return kernels().weighted_sum(w.data(), a.data(), w.size());
}
inline double weighted_dot(std::span<const double> w, std::span<const double> a,
                           std::span<const double> b) {
  return kernels().weighted_dot(w.data(), a.data(), b.data(), w.size());
}

}  // namespace bayesflow::simd

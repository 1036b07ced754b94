#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "bayesflow/simd.hpp"
#include "doctest.h"

using namespace bayesflow;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& gen, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(gen);
  return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("scalar kernels match naive loops") {
  std::mt19937_64 gen(1);
  const auto& k = simd::scalar_kernels();
  for (std::size_t n : {1u, 2u, 3u, 7u, 64u, 1001u}) {
    const auto w = random_vec(n, gen, 0.0, 1.0), a = random_vec(n, gen), b = random_vec(n, gen);
    long double s = 0, d = 0;
    for (std::size_t i = 0; i < n; ++i) {
      s += static_cast<long double>(w[i]) * a[i];
      d += static_cast<long double>(w[i]) * a[i] * b[i];
    }
    CHECK(k.weighted_sum(w.data(), a.data(), n) == doctest::Approx(static_cast<double>(s)).epsilon(1e-12));
    CHECK(k.weighted_dot(w.data(), a.data(), b.data(), n) ==
          doctest::Approx(static_cast<double>(d)).epsilon(1e-12));

    std::vector<double> face(n + 1);
    k.face_flux(a.data(), w.data(), b.data(), face.data(), n);
    CHECK(face.front() == 0.0);
    CHECK(face.back() == 0.0);
    for (std::size_t f = 1; f < n; ++f) CHECK(face[f] == w[f] * a[f] - b[f] * a[f - 1]);

    std::vector<double> y = b;
    k.axpy(0.5, a.data(), y.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y[i] == b[i] + 0.5 * a[i]);
  }
}

TEST_CASE("pme face flux uses clipped, donor-limited arithmetic-mean mobility") {
  const std::vector<double> r{1.0, -3.0, 2.0, 0.5};
  const std::vector<double> p{0.0, 1.0, 0.0, 2.0};
  const std::vector<double> coef{0.0, 1.0, 2.0, 3.0, 0.0};
  std::vector<double> face(5);
  simd::scalar_kernels().pme_face_flux(r.data(), p.data(), coef.data(), face.data(), 4);
  CHECK(face[0] == 0.0);
  CHECK(face[1] == 0.0);  // mean of 1 and -3 is negative
  CHECK(face[2] == 0.0);  // mean of -3 and 2 is negative
  CHECK(face[3] == doctest::Approx(3.0 * 1.25 * (2.0 * (0.5 - 2.0) + 2.0)));
  CHECK(face[4] == 0.0);

  const std::vector<double> r2{0.0, 1.0, 0.2, 1.0};
  const std::vector<double> p2{0.0, -3.0, 0.0, -4.0};
  simd::scalar_kernels().pme_face_flux(r2.data(), p2.data(), coef.data(), face.data(), 4);
  CHECK(face[1] == 0.0);  // drive pulls from the empty left node
  CHECK(face[2] == doctest::Approx(2.0 * 0.2 * (2.0 * (0.2 - 1.0) + 3.0)));
  CHECK(face[3] == doctest::Approx(3.0 * 0.2 * (2.0 * 0.8 - 4.0)));
}

TEST_CASE("divergence of a constant face flux vanishes and telescopes") {
  std::mt19937_64 gen(2);
  const std::size_t n = 37;
  auto face = random_vec(n + 1, gen);
  face.front() = face.back() = 0.0;
  const std::vector<double> vol(n, 1.0);
  std::vector<double> out(n);
  simd::scalar_kernels().flux_divergence(face.data(), vol.data(), out.data(), n);
  double total = 0.0;
  for (double v : out) total += v;
  CHECK(std::abs(total) < 1e-13);
}

TEST_CASE("every available level agrees with the scalar reference") {
  const auto levels = simd::available_levels();
  REQUIRE(!levels.empty());
  CHECK(levels.front() == simd::Level::scalar);
  const auto& ref = simd::scalar_kernels();
  std::mt19937_64 gen(3);
  for (auto level : levels) {
    const auto& k = simd::kernels(level);
    CAPTURE(simd::to_string(level));
    for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 8u, 17u, 255u, 4096u}) {
      CAPTURE(n);
      const auto w = random_vec(n + 1, gen, 0.0, 1.0), a = random_vec(n + 1, gen), b = random_vec(n + 1, gen);
      const auto c = random_vec(n + 1, gen, 0.0, 3.0);
      const double ws_ref = ref.weighted_sum(w.data(), a.data(), n);
      const double ws = k.weighted_sum(w.data(), a.data(), n);
      CHECK(std::abs(ws - ws_ref) <= 1e-13 * (1.0 + std::abs(ws_ref)) * static_cast<double>(n + 1));
      const double wd_ref = ref.weighted_dot(w.data(), a.data(), b.data(), n);
      const double wd = k.weighted_dot(w.data(), a.data(), b.data(), n);
      CHECK(std::abs(wd - wd_ref) <= 1e-13 * (1.0 + std::abs(wd_ref)) * static_cast<double>(n + 1));

      if (n > 0) {
        std::vector<double> f1(n + 1), f2(n + 1);
        ref.face_flux(a.data(), w.data(), b.data(), f1.data(), n);
        k.face_flux(a.data(), w.data(), b.data(), f2.data(), n);
        CHECK(bitwise_equal(f1, f2));

        ref.pme_face_flux(a.data(), b.data(), c.data(), f1.data(), n);
        k.pme_face_flux(a.data(), b.data(), c.data(), f2.data(), n);
        CHECK(bitwise_equal(f1, f2));

        std::vector<double> d1(n), d2(n);
        ref.flux_divergence(f1.data(), w.data(), d1.data(), n);
        k.flux_divergence(f1.data(), w.data(), d2.data(), n);
        CHECK(bitwise_equal(d1, d2));
      }

      std::vector<double> y1(b.begin(), b.begin() + static_cast<long>(n)), y2 = y1;
      ref.axpy(-0.7, a.data(), y1.data(), n);
      k.axpy(-0.7, a.data(), y2.data(), n);
      CHECK(bitwise_equal(y1, y2));

      std::vector<double> x1(a.begin(), a.begin() + static_cast<long>(n)), x2 = x1;
      ref.em_update(x1.data(), b.data(), w.data(), c.data(), 1e-3, n);
      k.em_update(x2.data(), b.data(), w.data(), c.data(), 1e-3, n);
      CHECK(bitwise_equal(x1, x2));
    }
  }
}

TEST_CASE("level override round-trips") {
  const auto before = simd::active_level();
  simd::set_level(simd::Level::scalar);
  CHECK(simd::active_level() == simd::Level::scalar);
  CHECK(simd::kernels().level == simd::Level::scalar);
  simd::set_level(before);
  CHECK(simd::active_level() == before);
}

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace bayesflow {

/// Counter-based normal generator: the draw for (seed, stream, step, k) is a
/// pure function of its key, so a particle's noise never depends on how many
/// other particles exist or which thread advances it.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  static constexpr std::uint64_t mix(std::uint64_t z) {
    // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t bits(std::uint64_t stream, std::uint64_t step, std::uint64_t k) const {
    return mix(seed_ ^ mix(stream ^ mix(step ^ mix(k))));
  }

  /// Uniform in the open interval (0, 1).
  double uniform(std::uint64_t stream, std::uint64_t step, std::uint64_t k) const {
    return (static_cast<double>(bits(stream, step, k) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Fills out with independent standard normals (Box-Muller pairs).
  void normals(std::uint64_t stream, std::uint64_t step, std::span<double> out) const {
    for (std::size_t i = 0; i < out.size(); i += 2) {
      const double u1 = uniform(stream, step, i);
      const double u2 = uniform(stream, step, i + 1);
      const double r = std::sqrt(-2.0 * std::log(u1));
      const double a = 2.0 * std::numbers::pi * u2;
      out[i] = r * std::cos(a);
      if (i + 1 < out.size()) out[i + 1] = r * std::sin(a);
    }
  }

  double normal(std::uint64_t stream, std::uint64_t step) const {
    double z;
    normals(stream, step, std::span<double>(&z, 1));
    return z;
  }

 private:
  std::uint64_t seed_;
};

}  // namespace bayesflow

#include <atomic>
#include <cstdlib>
#include <string>

#include "bayesflow/error.hpp"
#include "simd_kernels_internal.hpp"

namespace bayesflow::simd {

std::string_view to_string(Level level) {
  return level == Level::avx2 ? "avx2" : "scalar";
}

const KernelTable* avx2_kernels() {
#ifdef BAYESFLOW_HAVE_AVX2_TU
  return &detail::avx2_table();
#else
  return nullptr;
#endif
}

bool cpu_supports(Level level) {
  switch (level) {
    case Level::scalar: return true;
    case Level::avx2:
#if defined(BAYESFLOW_HAVE_AVX2_TU) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
  }
  return false;
}

namespace {

Level detect_default() {
  if (const char* env = std::getenv("BAYESFLOW_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Level::scalar;
    if (v == "avx2" && cpu_supports(Level::avx2)) return Level::avx2;
  }
  return cpu_supports(Level::avx2) ? Level::avx2 : Level::scalar;
}

std::atomic<Level>& current() {
  static std::atomic<Level> level{detect_default()};
  return level;
}

}  // namespace

Level active_level() { return current().load(); }

void set_level(Level level) {
  require(cpu_supports(level), ErrorKind::input,
          "SIMD level " + std::string(to_string(level)) + " not supported on this host");
  current().store(level);
}

const KernelTable& kernels(Level level) {
  if (level == Level::avx2) {
    require(cpu_supports(Level::avx2), ErrorKind::input, "AVX2 kernels unavailable");
    return *avx2_kernels();
  }
  return scalar_kernels();
}

const KernelTable& kernels() { return kernels(active_level()); }

std::vector<Level> available_levels() {
  std::vector<Level> out{Level::scalar};
  if (cpu_supports(Level::avx2)) out.push_back(Level::avx2);
  return out;
}

}  // namespace bayesflow::simd

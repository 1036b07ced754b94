#pragma once

#include "bayesflow/simd.hpp"

namespace bayesflow::simd::detail {

#ifdef BAYESFLOW_HAVE_AVX2_TU
const KernelTable& avx2_table();
#endif

}  // namespace bayesflow::simd::detail

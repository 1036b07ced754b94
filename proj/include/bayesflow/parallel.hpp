#pragma once

#include <cstddef>
#include <functional>

namespace bayesflow {

// Process-wide worker count used by parallel_for. Defaults to 1.
void set_thread_count(int n);
int thread_count();

/// Runs body(begin, end) over a static partition of [0, n). Chunk boundaries
/// depend only on n and the thread count, and bodies must write disjoint
/// outputs, so results never depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace bayesflow

#pragma once

#include <cstddef>
#include <functional>

namespace lcal {

// Global worker count for data-parallel loops (CLI --threads / LCAL_THREADS).
void set_threads(int n);
int threads();

// Runs fn(i) for i in [0, n). Each index owns its output slot, so the result
// is identical for any thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace lcal

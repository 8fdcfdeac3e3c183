#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace ssrl {

// Global worker count for forward kernels. 1 = strict single-threaded mode.
// Kernels partition output elements so that each element is computed by
// exactly one thread with a fixed reduction order; results are therefore
// bit-identical for any thread count.
void set_num_threads(int n);
int num_threads();

// Runs fn(begin, end) over [0, n) split into contiguous chunks.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace ssrl

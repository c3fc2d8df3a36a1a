#pragma once

#include <cstdint>
#include <functional>

namespace campd {

// Worker count: min(hardware_concurrency, CAMPD_THREADS if set). At least 1.
int max_threads();

// Runs fn over contiguous chunks of [0, n). Chunks are disjoint, so results
// are identical for any worker count as long as fn only writes to slots in
// its own range. Runs inline when n is small or only one worker exists.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace campd

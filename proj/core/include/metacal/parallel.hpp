#pragma once

#include <cstddef>
#include <functional>

namespace metacal {

/// Worker count: `requested` if non-zero, else METACAL_THREADS if set and
/// positive, else the hardware concurrency (at least 1).
std::size_t resolve_thread_count(std::size_t requested = 0);

/// Calls body(i) for every i in [0, n) on up to `threads` workers. Each index
/// runs exactly once; callers write results into per-index slots so the
/// outcome does not depend on scheduling. The first exception thrown by a
/// body is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body);

}  // namespace metacal

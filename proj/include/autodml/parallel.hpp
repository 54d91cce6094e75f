#pragma once

#include <cstddef>
#include <functional>

namespace autodml {

// Worker count: AUTODML_THREADS when set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t worker_count();

// Calls body(i) for i in [0, n). Each index runs exactly once; callers write
// results into per-index slots so the outcome does not depend on scheduling.
// The first exception thrown by any body is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body, std::size_t threads = 0);

}  // namespace autodml

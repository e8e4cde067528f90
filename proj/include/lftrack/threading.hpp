#pragma once

#include <functional>

#include "lftrack/types.hpp"

namespace lftrack {

// Number of worker threads. Controlled by the LF_ESI_THREADS environment
// variable; defaults to the hardware concurrency. A value of 1 forces fully
// sequential execution.
int worker_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous index ranges,
// one per worker; every fn(i) must write only to its own slot so results are
// identical for any worker count.
void parallel_for(Index n, const std::function<void(Index)>& fn);

}  // namespace lftrack

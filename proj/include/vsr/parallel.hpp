#pragma once

#include <cstddef>
#include <functional>

namespace vsr {

/// Worker count used by parallel_for. Defaults to the number of logical cores.
int num_threads();
void set_num_threads(int n);

/// Run fn(i) for i in [0, n). Items are split into contiguous chunks, one per
/// worker. Callers must write results to per-item slots and combine them in
/// index order so outputs do not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace vsr

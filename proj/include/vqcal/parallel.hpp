#pragma once

#include <cstddef>
#include <functional>

namespace vqcal {

/// Worker count used by data-parallel loops. 1 (the default) runs inline.
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Calls fn(begin, end) on disjoint contiguous chunks of [0, n). Callers write
/// only to per-index output slots, so results do not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace vqcal

#pragma once

#include <cstddef>
#include <functional>

namespace dcm {

/// Worker count: DCM_THREADS if set (>= 1), otherwise hardware concurrency.
std::size_t worker_threads();

/// Runs body(begin, end) over disjoint chunks of [0, n). Falls back to a
/// single call when n * cost_per_item is small or only one worker is allowed.
/// Chunks never overlap, so results do not depend on the thread count as long
/// as body writes only to its own range.
void parallel_for(std::size_t n, std::size_t cost_per_item,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace dcm

#pragma once

#include <cstddef>
#include <functional>

namespace xprompt {

// Runs fn(0) .. fn(n-1) on up to `jobs` threads. Work items are claimed in
// index order; callers write results into per-index slots so the outcome does
// not depend on scheduling. If any call throws, the exception of the lowest
// failing index is rethrown after all threads finish.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace xprompt

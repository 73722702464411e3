#pragma once

#include "dpet/core.hpp"

#include <functional>

namespace dpet {

/// Worker count used by parallel_for; 0 or 1 runs inline.
void set_num_threads(int n);
int num_threads();

/// Calls fn(i) for i in [0, n). Each index is visited by exactly one worker, so
/// results are independent of the thread count as long as fn writes only slot i.
void parallel_for(Index n, const std::function<void(Index)>& fn);

}  // namespace dpet

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace vsd {

// Global worker count. Defaults to 1; the CLI --threads flag sets it.
void set_num_threads(int n);
int num_threads();

// Runs fn over [0, n) split into fixed-size chunks. Chunk boundaries depend
// only on n and grain, never on the thread count, and every chunk writes a
// disjoint output range in the callers' kernels, so results are bitwise
// identical for any thread count.
void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace vsd

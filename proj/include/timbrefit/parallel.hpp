#pragma once

#include <cstddef>
#include <functional>

namespace timbrefit {

/// Worker count used by batched rendering and loss evaluation.
/// Defaults to std::thread::hardware_concurrency().
std::size_t num_threads();
void set_num_threads(std::size_t n);

/// Runs body(i) for i in [0, n). Each index is processed exactly once and
/// results must be written to per-index slots, so output never depends on
/// the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

} // namespace timbrefit

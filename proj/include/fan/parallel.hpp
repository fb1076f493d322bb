#pragma once

#include <cstddef>
#include <functional>

namespace fan {

/// Number of worker threads used inside the tensor core. Defaults to the
/// FAN_THREADS environment variable, or 1 when unset.
std::size_t num_threads();
void set_num_threads(std::size_t n);

/// Splits [0, n) into contiguous chunks and runs `body(begin, end)` on each,
/// blocking until all chunks finish. Chunk boundaries depend only on `n` and
/// the thread count, and every index is handled by exactly one call.
void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace fan

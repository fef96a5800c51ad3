#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace freeflow {

inline int default_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

/// Worker count parallel_for will actually use: `threads` (or the hardware
/// count when <= 0) capped by the number of work items. Lets callers size
/// per-worker scratch.
inline int resolve_threads(int threads, std::size_t n) {
  if (threads <= 0) threads = default_threads();
  std::size_t cap = std::max<std::size_t>(n, 1);
  return static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(threads), cap));
}

/// Run fn(i, worker) for i in [0, n) on up to `threads` workers. Work items
/// must be independent; callers that reduce results must do so in index order
/// afterwards so results do not depend on the thread count. The first
/// exception thrown by any worker is rethrown on the calling thread.
inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t, int)>& fn) {
  if (n == 0) return;
  threads = resolve_threads(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  std::exception_ptr error;
  std::mutex error_mutex;
  std::size_t chunk = (n + static_cast<std::size_t>(threads) - 1) /
                      static_cast<std::size_t>(threads);
  for (int t = 0; t < threads; ++t) {
    std::size_t lo = static_cast<std::size_t>(t) * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, t, &fn, &error, &error_mutex] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i, t);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace freeflow

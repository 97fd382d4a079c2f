#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace ssr {

// Runs fn(i) for i in [0, n). Work is split into contiguous index blocks, one
// per worker; callers must only write to disjoint state per index so results
// do not depend on the thread count.
inline void parallel_for(int n, const std::function<void(int)>& fn, int min_per_thread = 1) {
  if (n <= 0) return;
  unsigned hw = std::thread::hardware_concurrency();
  int workers = static_cast<int>(std::max(1u, hw));
  workers = std::min(workers, std::max(1, n / std::max(1, min_per_thread)));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  int chunk = (n + workers - 1) / workers;
  for (int t = 0; t < workers; ++t) {
    int lo = t * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (int i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace ssr

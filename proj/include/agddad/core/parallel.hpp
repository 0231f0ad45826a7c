#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace agddad {

inline int effective_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Static-chunked parallel map. Each index must write only its own output
// slots, which keeps results independent of scheduling; reductions are done
// by the caller in index order afterwards.
inline void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn) {
  const int t = std::min<size_t>(effective_threads(threads), n == 0 ? 1 : n);
  if (t <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(t);
  pool.reserve(t);
  for (int k = 0; k < t; ++k) {
    const size_t lo = n * k / t;
    const size_t hi = n * (k + 1) / t;
    pool.emplace_back([&, lo, hi, k] {
      try {
        for (size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errs[k] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errs) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace agddad

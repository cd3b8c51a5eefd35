#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace amalgam {

// Runs body(i) for i in [0, n). Work is split into contiguous chunks, one per
// thread; callers write into per-index slots so results never depend on the
// thread count. The first exception thrown (lowest chunk) is rethrown.
template <typename Body>
void parallel_for(std::size_t n, int threads, Body&& body) {
  const std::size_t workers =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      const std::size_t lo = w * chunk;
      const std::size_t hi = std::min(n, lo + chunk);
      try {
        for (std::size_t i = lo; i < hi; ++i) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Thread count from AMALGAM_THREADS when set, otherwise the fallback.
inline int threads_from_env(int fallback) {
  if (const char* v = std::getenv("AMALGAM_THREADS")) {
    try {
      int t = std::stoi(v);
      if (t >= 1) return t;
    } catch (...) {
    }
  }
  return fallback;
}

}  // namespace amalgam

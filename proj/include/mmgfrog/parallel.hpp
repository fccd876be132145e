#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace mmgfrog {

namespace detail {
inline unsigned& thread_setting() {
  static unsigned n = [] {
    if (const char* env = std::getenv("MMGFROG_THREADS")) {
      try {
        int v = std::stoi(env);
        if (v > 0) return static_cast<unsigned>(v);
      } catch (...) {
      }
    }
    return std::max(1u, std::thread::hardware_concurrency());
  }();
  return n;
}
}  // namespace detail

/// Worker count used by data-parallel loops. Reads MMGFROG_THREADS on first use.
inline unsigned thread_count() { return detail::thread_setting(); }
inline void set_thread_count(unsigned n) { detail::thread_setting() = std::max(1u, n); }

namespace detail {
inline thread_local bool inside_parallel = false;

struct ParallelScope {
  bool saved;
  ParallelScope() : saved(inside_parallel) { inside_parallel = true; }
  ~ParallelScope() { inside_parallel = saved; }
};
}  // namespace detail

/// Runs fn(i) for i in [0, n). Each index is visited exactly once; callers
/// write results into per-index slots and reduce afterwards in index order,
/// so the outcome does not depend on the worker count. Nested calls run
/// serially on the calling worker.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = detail::inside_parallel ? 1 : std::min<std::size_t>(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, &errors, w, lo, hi] {
      detail::ParallelScope scope;
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  try {
    detail::ParallelScope scope;
    for (std::size_t i = 0; i < std::min(n, chunk); ++i) fn(i);
  } catch (...) {
    errors[0] = std::current_exception();
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace mmgfrog

#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace dce::detail {

// Runs fn(begin, end) over contiguous chunks of [0, n). Chunks write to
// disjoint output slots, so the result never depends on the thread count.
// The first exception (by chunk order) is rethrown after all chunks finish.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  threads = std::clamp(threads, 1, std::max(1, n));
  if (threads == 1) {
    fn(0, n);
    return;
  }
  const int chunk = (n + threads - 1) / threads;
  const int n_chunks = (n + chunk - 1) / chunk;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(n_chunks));
  std::vector<std::thread> pool;
  for (int c = 0; c < n_chunks; ++c) {
    const int begin = c * chunk;
    const int end = std::min(n, begin + chunk);
    pool.emplace_back([&fn, &errors, c, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace dce::detail

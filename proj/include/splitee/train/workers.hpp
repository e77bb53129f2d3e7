#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace splitee::train {

/// Runs fn(0..n-1) on up to `workers` threads. Tasks must touch disjoint
/// state. If any task throws, the exception of the lowest index is rethrown
/// after all tasks finish, so failures do not depend on scheduling.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)> &fn) {
  std::vector<std::exception_ptr> errors(n);
  const auto threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto &th : pool) th.join();
  }
  for (auto &e : errors)
    if (e) std::rethrow_exception(e);
}

} // namespace splitee::train

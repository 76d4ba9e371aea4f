#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <thread>
#include <vector>

namespace mnlab {

namespace detail {
inline std::atomic<int>& thread_setting() {
  static std::atomic<int> n{0};
  return n;
}
}  // namespace detail

/// Caps the worker count used by parallel_for; 0 means hardware concurrency.
inline void set_num_threads(int n) { detail::thread_setting().store(std::max(n, 0)); }

inline int num_threads() {
  const int n = detail::thread_setting().load();
  if (n > 0) return n;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

/// Calls fn(begin, end) on disjoint contiguous chunks of [0, n). Callers
/// must make results independent of the chunking.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 16) {
  const auto workers = static_cast<std::size_t>(num_threads());
  const std::size_t chunks = std::min(workers, (n + min_chunk - 1) / std::max<std::size_t>(min_chunk, 1));
  if (chunks <= 1) {
    if (n > 0) fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(chunks);
  const std::size_t per = (n + chunks - 1) / chunks;
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t b = c * per;
    const std::size_t e = std::min(n, b + per);
    if (b >= e) break;
    pool.emplace_back([&, b, e, c] {
      try {
        fn(b, e);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
}

/// splitmix64 finalizer; derives independent stream seeds from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace mnlab

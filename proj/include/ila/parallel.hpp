#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace ila {

/// How batch work is split. Chunk boundaries depend only on `chunk`, never
/// on `threads`, so results do not change with the worker count.
struct Exec {
  std::size_t threads = 1;
  std::size_t chunk = 32;
};

/// Call fn(begin, end) for consecutive chunks of [0, n). Chunks are handed
/// out dynamically; the first exception thrown by any chunk is rethrown.
inline void for_each_chunk(std::size_t n, const Exec& exec,
                           const std::function<void(std::size_t, std::size_t)>& fn) {
  const std::size_t chunk = std::max<std::size_t>(1, exec.chunk);
  const std::size_t chunks = (n + chunk - 1) / chunk;
  const std::size_t workers = std::min(std::max<std::size_t>(1, exec.threads), chunks);
  if (workers <= 1) {
    for (std::size_t b = 0; b < n; b += chunk) fn(b, std::min(n, b + chunk));
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= chunks) return;
      try {
        fn(c * chunk, std::min(n, (c + 1) * chunk));
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        next = chunks;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace ila

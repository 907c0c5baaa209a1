#include "food/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace food {
namespace {

std::size_t default_workers() {
  std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("FOOD_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return std::min<std::size_t>(static_cast<std::size_t>(v), hw);
    } catch (...) {
    }
  }
  return hw;
}

std::atomic<std::size_t>& workers() {
  static std::atomic<std::size_t> n{default_workers()};
  return n;
}

}  // namespace

std::size_t worker_count() { return workers().load(); }
void set_worker_count(std::size_t n) { workers().store(std::max<std::size_t>(n, 1)); }

void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_chunk) {
  if (end <= begin) return;
  const std::size_t n = end - begin;
  const std::size_t chunks = std::min(worker_count(), std::max<std::size_t>(1, n / std::max<std::size_t>(min_chunk, 1)));
  if (chunks <= 1) {
    body(begin, end);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(chunks - 1);
  const std::size_t step = (n + chunks - 1) / chunks;
  for (std::size_t c = 1; c < chunks; ++c) {
    const std::size_t lo = begin + c * step;
    const std::size_t hi = std::min(end, lo + step);
    if (lo < hi) pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  body(begin, std::min(end, begin + step));
  for (auto& t : pool) t.join();
}

}  // namespace food

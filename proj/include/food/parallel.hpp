#pragma once

#include <cstddef>
#include <functional>

namespace food {

// Worker cap from FOOD_THREADS (default: hardware concurrency). Every
// parallel region splits its range into contiguous chunks and each output
// element is written by exactly one worker, so results do not depend on
// the worker count.
std::size_t worker_count();
void set_worker_count(std::size_t n);

void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_chunk = 1);

// Pins the worker count for the lifetime of the guard.
class ScopedWorkers {
 public:
  explicit ScopedWorkers(std::size_t n) : saved_(worker_count()) { set_worker_count(n); }
  ~ScopedWorkers() { set_worker_count(saved_); }
  ScopedWorkers(const ScopedWorkers&) = delete;
  ScopedWorkers& operator=(const ScopedWorkers&) = delete;

 private:
  std::size_t saved_;
};

}  // namespace food

#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace caspgrid {

/// Process-wide worker pool. Size 1 (the default) runs everything inline on
/// the calling thread, which is the bit-determinism mode; larger sizes only
/// ever split index ranges whose writes are disjoint, so results do not
/// depend on the thread count.
class ThreadPool {
 public:
  static ThreadPool& instance();

  /// Resize the pool. n == 0 means hardware concurrency.
  void set_threads(int n);
  int threads() const { return static_cast<int>(workers_.size()) + 1; }

  /// Runs fn(begin, end) over a partition of [0, total). Blocks until done.
  void parallel_for(int64_t total, const std::function<void(int64_t, int64_t)>& fn);

  ~ThreadPool();

 private:
  ThreadPool() = default;
  void stop_workers();

  struct Task {
    const std::function<void(int64_t, int64_t)>* fn = nullptr;
    int64_t begin = 0, end = 0;
  };

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_work_, cv_done_;
  std::vector<Task> queue_;
  int pending_ = 0;
  bool stopping_ = false;
};

inline void parallel_for(int64_t total, const std::function<void(int64_t, int64_t)>& fn) {
  ThreadPool::instance().parallel_for(total, fn);
}

}  // namespace caspgrid

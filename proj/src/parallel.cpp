#include "caspgrid/parallel.hpp"

#include <algorithm>

namespace caspgrid {

ThreadPool& ThreadPool::instance() {
  static ThreadPool pool;
  return pool;
}

void ThreadPool::set_threads(int n) {
  if (n == 0) n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  stop_workers();
  stopping_ = false;
  for (int i = 0; i < n - 1; ++i) {
    workers_.emplace_back([this] {
      std::unique_lock<std::mutex> lock(mu_);
      for (;;) {
        cv_work_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
        if (stopping_ && queue_.empty()) return;
        Task t = queue_.back();
        queue_.pop_back();
        lock.unlock();
        (*t.fn)(t.begin, t.end);
        lock.lock();
        if (--pending_ == 0) cv_done_.notify_all();
      }
    });
  }
}

void ThreadPool::stop_workers() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stopping_ = true;
  }
  cv_work_.notify_all();
  for (auto& w : workers_) w.join();
  workers_.clear();
}

ThreadPool::~ThreadPool() { stop_workers(); }

void ThreadPool::parallel_for(int64_t total,
                              const std::function<void(int64_t, int64_t)>& fn) {
  if (total <= 0) return;
  const int nthreads = threads();
  if (nthreads == 1 || total == 1) {
    fn(0, total);
    return;
  }
  const int64_t chunks = std::min<int64_t>(total, nthreads);
  const int64_t step = (total + chunks - 1) / chunks;
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (int64_t b = step; b < total; b += step) {
      queue_.push_back(Task{&fn, b, std::min(b + step, total)});
      ++pending_;
    }
  }
  cv_work_.notify_all();
  fn(0, std::min(step, total));  // caller takes the first chunk
  std::unique_lock<std::mutex> lock(mu_);
  cv_done_.wait(lock, [this] { return pending_ == 0; });
}

}  // namespace caspgrid

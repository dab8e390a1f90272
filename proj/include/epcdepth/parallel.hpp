#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "epcdepth/common.hpp"

namespace epc {

/// Persistent worker pool with a fetch-and-add chunk queue. Chunks are a
/// pure function of the problem size, never of the worker count, so any
/// kernel whose chunks write disjoint outputs is bit-deterministic for
/// every thread count.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  int lanes() const { return static_cast<int>(workers_.size()) + 1; }

  // Runs fn(chunk) for chunk in [0, nchunks); the calling thread
  // participates. Blocks until all chunks are done.
  void run(int64_t nchunks, const std::function<void(int64_t)>& fn) {
    if (nchunks <= 0) return;
    if (nchunks == 1 || workers_.empty() || in_worker_) {
      for (int64_t i = 0; i < nchunks; ++i) fn(i);
      return;
    }
    {
      std::unique_lock<std::mutex> lock(m_);
      next_.store(0, std::memory_order_relaxed);
      total_.store(nchunks, std::memory_order_relaxed);
      pending_ = nchunks;
      job_.store(&fn, std::memory_order_release);
      ++generation_;
    }
    cv_.notify_all();
    in_worker_ = true;  // nested run() calls fall back to serial
    work_loop();
    in_worker_ = false;
    std::unique_lock<std::mutex> lock(m_);
    done_cv_.wait(lock, [&] { return pending_ == 0; });
    job_.store(nullptr, std::memory_order_release);
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

 private:
  ThreadPool() {
    int n = env_int("EPC_THREADS", static_cast<int>(std::thread::hardware_concurrency()));
    if (n < 1) n = 1;
    if (n > 64) n = 64;
    for (int i = 0; i < n - 1; ++i) {
      workers_.emplace_back([this] { worker_main(); });
    }
  }

  ~ThreadPool() {
    {
      std::unique_lock<std::mutex> lock(m_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  void worker_main() {
    in_worker_ = true;
    uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lock(m_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      work_loop();
    }
  }

  void work_loop() {
    const std::function<void(int64_t)>* job = job_.load(std::memory_order_acquire);
    if (job == nullptr) return;
    const int64_t total = total_.load(std::memory_order_relaxed);
    int64_t done_here = 0;
    for (;;) {
      int64_t i = next_.fetch_add(1, std::memory_order_relaxed);
      if (i >= total) break;
      (*job)(i);
      ++done_here;
    }
    if (done_here > 0) {
      std::unique_lock<std::mutex> lock(m_);
      pending_ -= done_here;
      if (pending_ == 0) done_cv_.notify_all();
    } else {
      std::unique_lock<std::mutex> lock(m_);
      if (pending_ == 0) done_cv_.notify_all();
    }
  }

  std::vector<std::thread> workers_;
  std::mutex m_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::atomic<const std::function<void(int64_t)>*> job_{nullptr};
  std::atomic<int64_t> next_{0};
  std::atomic<int64_t> total_{0};
  int64_t pending_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
  static thread_local bool in_worker_;
};

inline thread_local bool ThreadPool::in_worker_ = false;

/// Splits [0, total) into fixed-size chunks and runs body(begin, end) for
/// each. Chunk boundaries depend only on (total, chunk_size).
template <class Body>
void parallel_chunks(int64_t total, int64_t chunk_size, const Body& body) {
  if (total <= 0) return;
  const int64_t nchunks = (total + chunk_size - 1) / chunk_size;
  if (nchunks == 1) {
    body(int64_t{0}, total);
    return;
  }
  ThreadPool::instance().run(nchunks, [&](int64_t c) {
    const int64_t b = c * chunk_size;
    const int64_t e = std::min(total, b + chunk_size);
    body(b, e);
  });
}

}  // namespace epc

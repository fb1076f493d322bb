#include "fan/parallel.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace fan {

namespace {

std::size_t threads_from_env() {
  if (const char* env = std::getenv("FAN_THREADS")) {
    try {
      const long n = std::stol(env);
      if (n > 0) return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

// Fixed-size pool; the calling thread always runs chunk 0.
class Pool {
 public:
  explicit Pool(std::size_t workers) {
    for (std::size_t i = 0; i < workers; ++i) {
      threads_.emplace_back([this, i] { worker_loop(i + 1); });
    }
  }

  ~Pool() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    wake_.notify_all();
    for (auto& t : threads_) t.join();
  }

  std::size_t size() const { return threads_.size() + 1; }

  void run(std::size_t chunks, const std::function<void(std::size_t)>& task) {
    {
      std::lock_guard lock(mutex_);
      task_ = &task;
      chunks_ = chunks;
      pending_ = threads_.size();
      ++generation_;
    }
    wake_.notify_all();
    task(0);
    std::unique_lock lock(mutex_);
    done_.wait(lock, [this] { return pending_ == 0; });
    task_ = nullptr;
  }

 private:
  void worker_loop(std::size_t index) {
    std::size_t seen = 0;
    for (;;) {
      const std::function<void(std::size_t)>* task = nullptr;
      std::size_t chunks = 0;
      {
        std::unique_lock lock(mutex_);
        wake_.wait(lock, [&] { return stopping_ || generation_ != seen; });
        if (stopping_) return;
        seen = generation_;
        task = task_;
        chunks = chunks_;
      }
      if (index < chunks) (*task)(index);
      {
        std::lock_guard lock(mutex_);
        if (--pending_ == 0) done_.notify_one();
      }
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mutex_;
  std::condition_variable wake_;
  std::condition_variable done_;
  const std::function<void(std::size_t)>* task_ = nullptr;
  std::size_t chunks_ = 0;
  std::size_t pending_ = 0;
  std::size_t generation_ = 0;
  bool stopping_ = false;
};

std::mutex g_config_mutex;
std::size_t g_threads = threads_from_env();
std::unique_ptr<Pool> g_pool;
std::mutex g_run_mutex;

}  // namespace

std::size_t num_threads() {
  std::lock_guard lock(g_config_mutex);
  return g_threads;
}

void set_num_threads(std::size_t n) {
  std::lock_guard run_lock(g_run_mutex);
  std::lock_guard lock(g_config_mutex);
  g_threads = std::max<std::size_t>(1, n);
  g_pool.reset();
}

void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  const std::size_t threads = num_threads();
  const std::size_t by_work = std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_chunk));
  const std::size_t chunks = std::min(threads, by_work);
  if (chunks <= 1) {
    body(0, n);
    return;
  }

  // Nested calls from inside a worker run serially.
  std::unique_lock run_lock(g_run_mutex, std::try_to_lock);
  if (!run_lock.owns_lock()) {
    body(0, n);
    return;
  }
  {
    std::lock_guard lock(g_config_mutex);
    if (!g_pool || g_pool->size() != g_threads) g_pool = std::make_unique<Pool>(g_threads - 1);
  }

  const std::size_t step = (n + chunks - 1) / chunks;
  std::exception_ptr error;
  std::mutex error_mutex;
  g_pool->run(chunks, [&](std::size_t c) {
    const std::size_t begin = c * step;
    const std::size_t end = std::min(n, begin + step);
    if (begin >= end) return;
    try {
      body(begin, end);
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  });
  if (error) std::rethrow_exception(error);
}

}  // namespace fan

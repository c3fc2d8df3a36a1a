#include "campd/parallel.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace campd {

int max_threads() {
  static const int n = [] {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* env = std::getenv("CAMPD_THREADS")) {
      int cap = std::atoi(env);
      if (cap >= 1) hw = std::min(hw, cap);
    }
    return hw;
  }();
  return n;
}

namespace {

// Fork-join pool with static partitioning: per epoch every worker processes
// its fixed share of [0, n) and acknowledges. No work stealing, so a worker
// never touches state published for a later epoch.
class Pool {
 public:
  explicit Pool(int n_workers) : n_workers_(n_workers) {
    for (int i = 0; i < n_workers; ++i)
      workers_.emplace_back([this, i] { worker_loop(i); });
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(m_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  void run(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    std::unique_lock<std::mutex> lk(m_);
    fn_ = &fn;
    n_ = n;
    pending_ = n_workers_;
    ++epoch_;
    cv_.notify_all();
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    fn_ = nullptr;
  }

 private:
  void worker_loop(int worker_id) {
    uint64_t seen_epoch = 0;
    for (;;) {
      const std::function<void(int64_t, int64_t)>* fn;
      int64_t n;
      {
        std::unique_lock<std::mutex> lk(m_);
        cv_.wait(lk, [&] { return stop_ || epoch_ != seen_epoch; });
        if (stop_) return;
        seen_epoch = epoch_;
        fn = fn_;
        n = n_;
      }
      int64_t per = (n + n_workers_ - 1) / n_workers_;
      int64_t b = std::min<int64_t>(n, worker_id * per);
      int64_t e = std::min<int64_t>(n, b + per);
      if (b < e) (*fn)(b, e);
      {
        std::lock_guard<std::mutex> lk(m_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  const int n_workers_;
  std::vector<std::thread> workers_;
  std::mutex m_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(int64_t, int64_t)>* fn_ = nullptr;
  int64_t n_ = 0;
  int pending_ = 0;
  uint64_t epoch_ = 0;
  bool stop_ = false;
};

}  // namespace

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  if (max_threads() == 1 || n == 1) {
    fn(0, n);
    return;
  }
  static Pool pool(max_threads());
  pool.run(n, fn);
}

}  // namespace campd

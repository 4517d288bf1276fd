#include "nsrc/common.hpp"

#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace nsrc {

void fail(const std::string& msg) { throw Error(msg); }

namespace {

// A recorded graph keeps hundreds of MB of activations alive, so the default
// mmap-per-large-block policy would fault in fresh zero pages on every tensor
// allocation. Keeping large blocks on the heap lets consecutive passes reuse
// warm memory.
struct MallocTuning {
  MallocTuning() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  }
};
const MallocTuning g_malloc_tuning;

}  // namespace

namespace {

std::atomic<int> g_num_threads{0};

// Minimal persistent pool. Work is handed out as fixed contiguous chunks;
// which thread runs a chunk never affects the result.
struct Job {
  const std::function<void(std::size_t, std::size_t)>* fn = nullptr;
  std::size_t n = 0;
  std::size_t chunk = 0;
  int parts = 0;
  std::atomic<int> next{0};
  std::atomic<int> pending{0};
};

class Pool {
 public:
  explicit Pool(int workers) {
    for (int i = 0; i < workers; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  ~Pool() {
    {
      std::unique_lock lk(m_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
           int parts) {
    auto job = std::make_shared<Job>();
    job->fn = &fn;
    job->n = n;
    job->parts = parts;
    job->chunk = (n + parts - 1) / parts;
    job->pending.store(parts, std::memory_order_relaxed);
    {
      std::unique_lock lk(m_);
      current_ = job;
      ++generation_;
    }
    cv_.notify_all();
    drain(*job);  // caller participates
    std::unique_lock lk(done_m_);
    done_cv_.wait(lk, [&] { return job->pending.load(std::memory_order_acquire) == 0; });
    {
      std::unique_lock g(m_);
      if (current_ == job) current_.reset();
    }
  }

 private:
  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock lk(m_);
        cv_.wait(lk, [&] { return stop_ || (generation_ != seen && current_); });
        if (stop_) return;
        seen = generation_;
        job = current_;
      }
      if (job) drain(*job);
    }
  }

  void drain(Job& job) {
    for (;;) {
      const int p = job.next.fetch_add(1, std::memory_order_relaxed);
      if (p >= job.parts) return;
      const std::size_t b = std::min(job.n, job.chunk * static_cast<std::size_t>(p));
      const std::size_t e = std::min(job.n, b + job.chunk);
      if (b < e) (*job.fn)(b, e);
      if (job.pending.fetch_sub(1, std::memory_order_acq_rel) == 1) {
        std::unique_lock lk(done_m_);
        done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> threads_;
  std::mutex m_;
  std::condition_variable cv_;
  std::mutex done_m_;
  std::condition_variable done_cv_;
  bool stop_ = false;
  std::uint64_t generation_ = 0;
  std::shared_ptr<Job> current_;
};

Pool& pool() {
  static Pool p{[] {
    int n = g_num_threads.load();
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    return n - 1;  // caller thread participates
  }()};
  return p;
}

std::mutex g_run_mutex;

}  // namespace

void set_num_threads(int n) { g_num_threads.store(n); }

int num_threads() {
  int n = g_num_threads.load();
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return n < 1 ? 1 : n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  const int workers = num_threads();
  if (workers <= 1 || n < 2) {
    fn(0, n);
    return;
  }
  // One parallel region at a time; nested calls degrade to serial.
  std::unique_lock lk(g_run_mutex, std::try_to_lock);
  if (!lk.owns_lock()) {
    fn(0, n);
    return;
  }
  const int parts = static_cast<int>(std::min<std::size_t>(n, static_cast<std::size_t>(workers) * 4));
  pool().run(n, fn, parts);
}

}  // namespace nsrc

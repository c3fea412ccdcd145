#pragma once

#include <atomic>
#include <cassert>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "skild/errors.hpp"

namespace skild {

// Worker pool for batch-level parallelism in the dense kernels. Work is
// partitioned into contiguous output-row blocks, so every output element is
// accumulated by exactly one thread in a fixed k-order: results are bitwise
// identical for any thread count.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  void run_chunks(int n_chunks, const std::function<void(int)>& fn) {
    if (n_chunks <= 1 || workers_.empty()) {
      for (int i = 0; i < n_chunks; ++i) fn(i);
      return;
    }
    std::unique_lock<std::mutex> lock(mu_);
    job_fn_ = &fn;
    job_total_ = n_chunks;
    job_next_.store(0, std::memory_order_relaxed);
    job_done_ = 0;
    ++job_id_;
    cv_start_.notify_all();
    // The caller participates too.
    while (true) {
      const int idx = job_next_.fetch_add(1, std::memory_order_relaxed);
      if (idx >= n_chunks) break;
      lock.unlock();
      fn(idx);
      lock.lock();
      ++job_done_;
    }
    cv_done_.wait(lock, [&] { return job_done_ == job_total_; });
    job_fn_ = nullptr;
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
      cv_start_.notify_all();
    }
    for (auto& t : workers_) t.join();
  }

 private:
  ThreadPool() {
    int n = default_thread_count();
    for (int i = 0; i < n - 1; ++i) workers_.emplace_back([this] { worker_loop(); });
  }

  static int default_thread_count() {
    if (const char* env = std::getenv("SKILD_THREADS")) {
      const int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    return static_cast<int>(hw > 8 ? 8 : hw);
  }

  void worker_loop() {
    std::unique_lock<std::mutex> lock(mu_);
    uint64_t seen = 0;
    while (true) {
      cv_start_.wait(lock, [&] { return stop_ || (job_fn_ && job_id_ != seen); });
      if (stop_) return;
      seen = job_id_;
      const auto* fn = job_fn_;
      const int total = job_total_;
      while (true) {
        const int idx = job_next_.fetch_add(1, std::memory_order_relaxed);
        if (idx >= total) break;
        lock.unlock();
        (*fn)(idx);
        lock.lock();
        if (++job_done_ == job_total_) cv_done_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_start_;
  std::condition_variable cv_done_;
  const std::function<void(int)>* job_fn_ = nullptr;
  std::atomic<int> job_next_{0};
  int job_total_ = 0;
  int job_done_ = 0;
  uint64_t job_id_ = 0;
  bool stop_ = false;
};

// Row ranges for splitting `rows` of output across the pool, sized so tiny
// problems stay single-threaded.
inline void parallel_rows(int rows, int64_t work_per_row, const std::function<void(int, int)>& fn) {
  constexpr int64_t kMinWorkPerChunk = 200000;
  ThreadPool& pool = ThreadPool::instance();
  int chunks = pool.size();
  const int64_t total = work_per_row * rows;
  if (chunks > 1) {
    const int by_work = static_cast<int>(total / kMinWorkPerChunk);
    if (by_work < chunks) chunks = by_work;
  }
  if (chunks <= 1) {
    fn(0, rows);
    return;
  }
  if (chunks > rows) chunks = rows;
  const int base = rows / chunks, rem = rows % chunks;
  std::vector<std::pair<int, int>> ranges;
  ranges.reserve(chunks);
  int r0 = 0;
  for (int c = 0; c < chunks; ++c) {
    const int len = base + (c < rem ? 1 : 0);
    ranges.emplace_back(r0, r0 + len);
    r0 += len;
  }
  pool.run_chunks(chunks, [&](int c) { fn(ranges[c].first, ranges[c].second); });
}

// Dense row-major matrix of doubles. Computation is double precision
// throughout; file payloads are f32 and narrowed at serialization time.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}
  Mat(int r, int c, double fill) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

  double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

  size_t size() const { return a.size(); }
  double* data() { return a.data(); }
  const double* data() const { return a.data(); }

  void fill(double v) { std::fill(a.begin(), a.end(), v); }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  static Mat row(const std::vector<double>& v) {
    Mat m(1, static_cast<int>(v.size()));
    m.a = v;
    return m;
  }
};

inline void check_shapes(bool ok, const char* what) {
  if (!ok) raise(ErrorKind::ShapeMismatch, what);
}

// C (+)= A * B
inline void mm_nn(const Mat& A, const Mat& B, Mat& C, bool accumulate) {
  check_shapes(A.cols == B.rows && C.rows == A.rows && C.cols == B.cols, "mm_nn");
  const int n = B.cols, k = A.cols;
  parallel_rows(A.rows, static_cast<int64_t>(n) * k, [&](int i0, int i1) {
    for (int i = i0; i < i1; ++i) {
      double* ci = &C.a[static_cast<size_t>(i) * n];
      if (!accumulate)
        for (int j = 0; j < n; ++j) ci[j] = 0.0;
      const double* ai = &A.a[static_cast<size_t>(i) * k];
      for (int p = 0; p < k; ++p) {
        const double aip = ai[p];
        const double* bp = &B.a[static_cast<size_t>(p) * n];
        for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
      }
    }
  });
}

// C (+)= A * B^T
inline void mm_nt(const Mat& A, const Mat& B, Mat& C, bool accumulate) {
  check_shapes(A.cols == B.cols && C.rows == A.rows && C.cols == B.rows, "mm_nt");
  const int n = B.rows, k = A.cols;
  parallel_rows(A.rows, static_cast<int64_t>(n) * k, [&](int i0, int i1) {
    for (int i = i0; i < i1; ++i) {
      const double* ai = &A.a[static_cast<size_t>(i) * k];
      double* ci = &C.a[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) {
        const double* bj = &B.a[static_cast<size_t>(j) * k];
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
        ci[j] = accumulate ? ci[j] + acc : acc;
      }
    }
  });
}

// C (+)= A^T * B   (A is k x m, B is k x n, C is m x n)
inline void mm_tn(const Mat& A, const Mat& B, Mat& C, bool accumulate) {
  check_shapes(A.rows == B.rows && C.rows == A.cols && C.cols == B.cols, "mm_tn");
  const int m = A.cols, n = B.cols, k = A.rows;
  parallel_rows(m, static_cast<int64_t>(n) * k, [&](int i0, int i1) {
    for (int i = i0; i < i1; ++i) {
      double* ci = &C.a[static_cast<size_t>(i) * n];
      if (!accumulate)
        for (int j = 0; j < n; ++j) ci[j] = 0.0;
      for (int p = 0; p < k; ++p) {
        const double api = A.a[static_cast<size_t>(p) * m + i];
        const double* bp = &B.a[static_cast<size_t>(p) * n];
        for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
      }
    }
  });
}

}  // namespace skild

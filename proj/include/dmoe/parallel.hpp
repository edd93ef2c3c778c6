// SPDX-License-Identifier: Apache-2.0
//
// Static-partition data parallelism. Work items are split into contiguous
// chunks, one per worker, so every output region is owned by exactly one
// thread and results never depend on the worker count.

#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace dmoe {

// Number of workers used by parallel kernels. Defaults to 1.
std::size_t worker_count();
void set_worker_count(std::size_t n);

// RAII override of the worker count for a scope.
class ScopedWorkers {
 public:
  explicit ScopedWorkers(std::size_t n) : saved_(worker_count()) { set_worker_count(n); }
  ~ScopedWorkers() { set_worker_count(saved_); }
  ScopedWorkers(const ScopedWorkers&) = delete;
  ScopedWorkers& operator=(const ScopedWorkers&) = delete;

 private:
  std::size_t saved_;
};

// Calls fn(i) for each i in [0, n). Items are distributed in contiguous
// chunks; fn must only write state owned by item i.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([begin, end, &fn] {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
}

}  // namespace dmoe

// SPDX-License-Identifier: Apache-2.0
//
// Process-wide counters used to assert work proportionality and the absence
// of hidden value copies. All counters are relaxed atomics; they are cheap
// enough to stay enabled in release builds because kernels update them once
// per block product rather than once per multiply-add.

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <new>

namespace dmoe {

struct KernelCounters {
  std::atomic<std::uint64_t> sparse_flops{0};       // 2 per multiply-add in block kernels
  std::atomic<std::uint64_t> sparse_value_allocs{0};  // block-value buffers allocated
  std::atomic<std::uint64_t> dense_allocs{0};         // dense matrix buffers allocated
};

KernelCounters& counters();

// Snapshot of the counters; subtracting two snapshots isolates one region.
struct CounterSnapshot {
  std::uint64_t sparse_flops = 0;
  std::uint64_t sparse_value_allocs = 0;
  std::uint64_t dense_allocs = 0;

  static CounterSnapshot take();
  friend CounterSnapshot operator-(const CounterSnapshot& a, const CounterSnapshot& b) {
    return {a.sparse_flops - b.sparse_flops, a.sparse_value_allocs - b.sparse_value_allocs,
            a.dense_allocs - b.dense_allocs};
  }
};

enum class AllocKind { kDense, kSparseValues };

// Minimal allocator that bumps a counter whenever a buffer is obtained.
template <typename T, AllocKind Kind>
struct CountingAllocator {
  using value_type = T;

  CountingAllocator() noexcept = default;
  template <typename U>
  CountingAllocator(const CountingAllocator<U, Kind>&) noexcept {}

  T* allocate(std::size_t n) {
    if constexpr (Kind == AllocKind::kDense) {
      counters().dense_allocs.fetch_add(1, std::memory_order_relaxed);
    } else {
      counters().sparse_value_allocs.fetch_add(1, std::memory_order_relaxed);
    }
    return static_cast<T*>(::operator new(n * sizeof(T)));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p); }

  template <typename U>
  struct rebind {
    using other = CountingAllocator<U, Kind>;
  };

  friend bool operator==(const CountingAllocator&, const CountingAllocator&) { return true; }
};

}  // namespace dmoe

// SPDX-License-Identifier: Apache-2.0

#include "dmoe/instrumentation.hpp"

namespace dmoe {

KernelCounters& counters() {
  static KernelCounters instance;
  return instance;
}

CounterSnapshot CounterSnapshot::take() {
  auto& c = counters();
  return {c.sparse_flops.load(std::memory_order_relaxed),
          c.sparse_value_allocs.load(std::memory_order_relaxed),
          c.dense_allocs.load(std::memory_order_relaxed)};
}

}  // namespace dmoe

// SPDX-License-Identifier: Apache-2.0

#include "dmoe/parallel.hpp"

#include <atomic>

namespace dmoe {
namespace {
std::atomic<std::size_t> g_workers{1};
}  // namespace

std::size_t worker_count() { return g_workers.load(std::memory_order_relaxed); }

void set_worker_count(std::size_t n) { g_workers.store(n == 0 ? 1 : n, std::memory_order_relaxed); }

}  // namespace dmoe

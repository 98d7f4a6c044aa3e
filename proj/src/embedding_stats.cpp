#include "ttrec/embedding_stats.hpp"

#include <atomic>

namespace ttrec {

namespace {
std::atomic<std::uint64_t> g_rows{0};
std::atomic<std::size_t> g_ws_current{0};
std::atomic<std::size_t> g_ws_peak{0};
}  // namespace

void EmbeddingStats::reset() {
  g_rows.store(0, std::memory_order_relaxed);
  g_ws_current.store(0, std::memory_order_relaxed);
  g_ws_peak.store(0, std::memory_order_relaxed);
}

std::uint64_t EmbeddingStats::tt_rows_computed() {
  return g_rows.load(std::memory_order_relaxed);
}

void EmbeddingStats::add_rows(std::uint64_t n) {
  g_rows.fetch_add(n, std::memory_order_relaxed);
}

std::size_t EmbeddingStats::peak_workspace_bytes() {
  return g_ws_peak.load(std::memory_order_relaxed);
}

void EmbeddingStats::workspace_add(std::size_t bytes) {
  const std::size_t cur = g_ws_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  std::size_t peak = g_ws_peak.load(std::memory_order_relaxed);
  while (cur > peak && !g_ws_peak.compare_exchange_weak(peak, cur, std::memory_order_relaxed)) {
  }
}

void EmbeddingStats::workspace_sub(std::size_t bytes) {
  g_ws_current.fetch_sub(bytes, std::memory_order_relaxed);
}

}  // namespace ttrec

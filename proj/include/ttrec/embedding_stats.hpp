#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace ttrec {

/// Process-wide instrumentation for the embedding kernels. Row counting lets
/// callers prove a cache actually bypassed the TT chain; workspace tracking
/// exposes the transient per-chunk buffer footprint.
struct EmbeddingStats {
  static void reset();

  /// Embedding rows materialized through the chained-product path.
  static std::uint64_t tt_rows_computed();
  static void add_rows(std::uint64_t n);

  /// High-water mark of live kernel workspace since the last reset.
  static std::size_t peak_workspace_bytes();
  static void workspace_add(std::size_t bytes);
  static void workspace_sub(std::size_t bytes);
};

namespace detail {

/// RAII scratch allocation that reports its footprint to EmbeddingStats.
template <typename T>
struct TrackedBuffer {
  std::vector<T> buf;
  explicit TrackedBuffer(std::size_t n) : buf(n) {
    EmbeddingStats::workspace_add(n * sizeof(T));
  }
  ~TrackedBuffer() { EmbeddingStats::workspace_sub(buf.size() * sizeof(T)); }
  TrackedBuffer(const TrackedBuffer&) = delete;
  TrackedBuffer& operator=(const TrackedBuffer&) = delete;
  T* data() { return buf.data(); }
  T& operator[](std::size_t i) { return buf[i]; }
};

}  // namespace detail
}  // namespace ttrec

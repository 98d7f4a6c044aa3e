#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "ttrec/embedding_ops.hpp"
#include "ttrec/index_batch.hpp"

namespace ttrec {

/// Open-addressing frequency counter: power-of-two capacity, Fibonacci
/// hashing, linear probing, grown at 0.7 load factor. Keys are row indices
/// (non-negative); every present key has count >= 1.
class FreqTable {
 public:
  explicit FreqTable(std::size_t initial_capacity = 64);

  void increment(index_t key, std::uint64_t by = 1);
  std::uint64_t count(index_t key) const;
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return keys_.size(); }
  void clear();

  /// counts = floor(count * factor); keys reaching zero are dropped. This is
  /// the only way counts decrease.
  void decay(double factor);

  std::vector<std::pair<index_t, std::uint64_t>> entries() const;

  /// All entries ordered by (count desc, key asc).
  std::vector<std::pair<index_t, std::uint64_t>> entries_sorted() const;

  /// The k hottest keys in (count desc, key asc) order; fewer if the table
  /// holds fewer distinct keys.
  std::vector<index_t> top_k(std::size_t k) const;

 private:
  std::size_t slot_for(index_t key) const;
  void grow();

  static constexpr index_t kEmpty = -1;
  std::vector<index_t> keys_;
  std::vector<std::uint64_t> counts_;
  std::size_t size_ = 0;
  int shift_ = 0;  // 64 - log2(capacity)
};

/// Fraction of membership churn between two hot sets of nominal size k:
/// |symmetric difference| / (2k). 0 = identical sets, 1 = full turnover.
double hot_set_drift(std::span<const index_t> prev, std::span<const index_t> cur, std::size_t k);

enum class CacheState { WarmUp, Active };

/// Dense per-slot gradient accumulator for cached rows.
template <Scalar T>
class SlotGradients {
 public:
  SlotGradients(index_t emb_dim, index_t capacity)
      : emb_dim_(emb_dim), slot_pos_(capacity, -1) {}

  /// Gradient row for a slot, allocated (zeroed) on first touch.
  T* row_for(index_t slot) {
    require_arg(slot >= 0 && slot < static_cast<index_t>(slot_pos_.size()),
                "slot ", slot, " outside cache capacity ", slot_pos_.size());
    if (slot_pos_[slot] < 0) {
      slot_pos_[slot] = static_cast<index_t>(slots_.size());
      slots_.push_back(slot);
      rows_.resize(rows_.size() + emb_dim_, T(0));
    }
    return rows_.data() + slot_pos_[slot] * emb_dim_;
  }

  index_t emb_dim() const { return emb_dim_; }
  const std::vector<index_t>& slots() const { return slots_; }
  const T* row(std::size_t i) const { return rows_.data() + i * emb_dim_; }

 private:
  index_t emb_dim_;
  std::vector<index_t> slot_pos_;
  std::vector<index_t> slots_;
  std::vector<T> rows_;
};

/// A batch split into cache-resident and chain-evaluated lookups. Both
/// parts keep the original bag count and per-lookup weights but are marked
/// Sum-pooled: pool each part, add them, and for Mean divide by the
/// original bag size (sum of the two parts' bag sizes). cached.indices are
/// cache slots; cached_rows keeps the original row ids.
struct CachePartition {
  IndexBatch cached;
  std::vector<index_t> cached_rows;
  IndexBatch tt;
  Pooling original_pooling = Pooling::Sum;

  index_t original_bag_size(index_t b) const {
    return cached.bag_size(b) + tt.bag_size(b);
  }
};

/// out = cached_out + tt_out bag-wise, then the original pooling's mean
/// division. All three spans are (num_bags x emb_dim).
template <Scalar T>
void combine_partition_outputs(const CachePartition& part, std::span<const T> cached_out,
                               std::span<const T> tt_out, std::span<T> out, index_t emb_dim) {
  const index_t bags = part.cached.num_bags();
  require_arg(static_cast<index_t>(out.size()) == bags * emb_dim, "bad output size");
  require_arg(cached_out.size() == out.size() && tt_out.size() == out.size(),
              "partition outputs disagree in size");
  for (index_t b = 0; b < bags; ++b) {
    T* dst = out.data() + b * emb_dim;
    const T* c = cached_out.data() + b * emb_dim;
    const T* t = tt_out.data() + b * emb_dim;
    for (index_t j = 0; j < emb_dim; ++j) dst[j] = c[j] + t[j];
    if (part.original_pooling == Pooling::Mean) {
      const index_t sz = part.original_bag_size(b);
      if (sz > 1) {
        const T inv = static_cast<T>(1.0 / static_cast<double>(sz));
        for (index_t j = 0; j < emb_dim; ++j) dst[j] *= inv;
      }
    }
  }
}

/// LFU cache of uncompressed embedding rows in front of a TT table.
/// Life cycle: WarmUp (frequency counting only, every lookup routed to the
/// chain) -> warmup_finalize (admit the k hottest rows, values pulled from
/// the table) -> Active, with periodic refresh() re-selecting the hot set.
/// Cached rows are trained directly; eviction discards learned values, so a
/// re-admitted row starts again from the chain's current value.
template <Scalar T>
class LfuCache {
 public:
  LfuCache(index_t capacity, index_t emb_dim, index_t refresh_period = 1000)
      : capacity_(capacity), emb_dim_(emb_dim), refresh_period_(refresh_period),
        slot_rows_(capacity, -1), store_(static_cast<size_t>(capacity) * emb_dim, T(0)) {
    require_arg(capacity >= 1, "cache capacity must be >= 1, got ", capacity);
    require_arg(emb_dim >= 1, "emb_dim must be >= 1, got ", emb_dim);
    require_arg(refresh_period >= 1, "refresh_period must be >= 1, got ", refresh_period);
  }

  /// Default sizing: 0.01% of the table's rows, at least one row.
  static index_t default_capacity(index_t table_rows) {
    return std::max<index_t>(1, static_cast<index_t>(std::llround(1e-4 * table_rows)));
  }

  CacheState state() const { return state_; }
  index_t capacity() const { return capacity_; }
  index_t emb_dim() const { return emb_dim_; }
  index_t refresh_period() const { return refresh_period_; }
  const FreqTable& freq() const { return freq_; }

  index_t resident_count() const { return resident_; }
  index_t slot_of(index_t row) const {
    auto it = slot_of_.find(row);
    return it == slot_of_.end() ? -1 : it->second;
  }
  index_t row_at(index_t slot) const { return slot_rows_[slot]; }
  std::span<const T> row_values(index_t slot) const {
    return {store_.data() + slot * emb_dim_, static_cast<size_t>(emb_dim_)};
  }
  std::span<T> row_values(index_t slot) {
    return {store_.data() + slot * emb_dim_, static_cast<size_t>(emb_dim_)};
  }

  /// Resident rows, ascending.
  std::vector<index_t> hot_rows() const {
    std::vector<index_t> rows;
    rows.reserve(resident_);
    for (index_t r : slot_rows_)
      if (r >= 0) rows.push_back(r);
    std::sort(rows.begin(), rows.end());
    return rows;
  }

  /// Frequency bookkeeping only (used while warming up without training).
  void record(const IndexBatch& batch) {
    for (index_t idx : batch.indices) freq_.increment(idx);
  }

  /// Records frequencies and routes each lookup to the cached or the chain
  /// part. During WarmUp everything goes to the chain part. Active accesses
  /// update the hit statistics.
  CachePartition record_and_partition(const IndexBatch& batch) {
    CachePartition part;
    part.original_pooling = batch.pooling;
    part.cached.pooling = Pooling::Sum;
    part.tt.pooling = Pooling::Sum;
    const bool weighted = batch.has_weights();
    const index_t bags = batch.num_bags();
    part.cached.offsets.reserve(bags + 1);
    part.tt.offsets.reserve(bags + 1);
    for (index_t b = 0; b < bags; ++b) {
      for (index_t t = batch.offsets[b]; t < batch.offsets[b + 1]; ++t) {
        const index_t row = batch.indices[t];
        freq_.increment(row);
        index_t slot = -1;
        if (state_ == CacheState::Active) {
          ++accesses_;
          slot = slot_of(row);
          if (slot >= 0) ++hits_;
        }
        if (slot >= 0) {
          part.cached.indices.push_back(slot);
          part.cached_rows.push_back(row);
          if (weighted) part.cached.weights.push_back(batch.weights[t]);
        } else {
          part.tt.indices.push_back(row);
          if (weighted) part.tt.weights.push_back(batch.weights[t]);
        }
      }
      part.cached.offsets.push_back(static_cast<index_t>(part.cached.indices.size()));
      part.tt.offsets.push_back(static_cast<index_t>(part.tt.indices.size()));
    }
    return part;
  }

  /// Ends WarmUp: admits the hottest rows and fills their values from the
  /// table's chain.
  void warmup_finalize(const TtTable<T>& table) {
    require_arg(state_ == CacheState::WarmUp, "cache already active");
    check_table(table);
    admit(freq_.top_k(static_cast<std::size_t>(capacity_)), table);
    prev_top_ = hot_rows();
    state_ = CacheState::Active;
  }

  /// Re-selects the hot set from cumulative frequencies. Retained rows keep
  /// their trained values; new rows are pulled from the chain; evicted rows
  /// are dropped. Returns the drift vs. the previous hot set.
  double refresh(const TtTable<T>& table) {
    require_arg(state_ == CacheState::Active, "refresh before warmup_finalize");
    check_table(table);
    admit(freq_.top_k(static_cast<std::size_t>(capacity_)), table);
    auto cur = hot_rows();
    const double drift =
        hot_set_drift(prev_top_, cur, static_cast<std::size_t>(capacity_));
    prev_top_ = std::move(cur);
    return drift;
  }

  /// Gradient step on resident rows only: row -= lr * grad.
  void cached_sgd_update(const SlotGradients<T>& grads, double lr) {
    require_arg(grads.emb_dim() == emb_dim_, "gradient emb_dim mismatch");
    const T step = static_cast<T>(lr);
    for (std::size_t i = 0; i < grads.slots().size(); ++i) {
      const index_t slot = grads.slots()[i];
      require_arg(slot >= 0 && slot < capacity_ && slot_rows_[slot] >= 0,
                  "cached_sgd_update on empty slot ", slot);
      T* dst = store_.data() + slot * emb_dim_;
      const T* src = grads.row(i);
      for (index_t j = 0; j < emb_dim_; ++j) dst[j] -= step * src[j];
    }
  }

  /// Hit fraction over all Active-phase accesses; 0 before any.
  double hit_rate() const {
    return accesses_ == 0 ? 0.0 : static_cast<double>(hits_) / static_cast<double>(accesses_);
  }
  std::uint64_t active_accesses() const { return accesses_; }
  std::uint64_t active_hits() const { return hits_; }

 private:
  void check_table(const TtTable<T>& table) const {
    require_arg(table.cols() == emb_dim_, "cache emb_dim ", emb_dim_,
                " does not match table emb_dim ", table.cols());
  }

  /// Rebuilds residency for the given hot rows (slot i = i-th hottest).
  /// Slot ids are stable only between refreshes.
  void admit(const std::vector<index_t>& rows, const TtTable<T>& table) {
    std::vector<T> store(static_cast<size_t>(capacity_) * emb_dim_, T(0));
    std::vector<index_t> slot_rows(capacity_, -1);
    std::unordered_map<index_t, index_t> slot_map;
    slot_map.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const index_t row = rows[i];
      T* dst = store.data() + static_cast<index_t>(i) * emb_dim_;
      const index_t old_slot = slot_of(row);
      if (old_slot >= 0) {
        const T* src = store_.data() + old_slot * emb_dim_;
        std::copy(src, src + emb_dim_, dst);
      } else {
        lookup_row(table, row, std::span<T>(dst, static_cast<size_t>(emb_dim_)));
      }
      slot_rows[static_cast<index_t>(i)] = row;
      slot_map.emplace(row, static_cast<index_t>(i));
    }
    store_ = std::move(store);
    slot_rows_ = std::move(slot_rows);
    slot_of_ = std::move(slot_map);
    resident_ = static_cast<index_t>(rows.size());
  }

  index_t capacity_;
  index_t emb_dim_;
  index_t refresh_period_;
  CacheState state_ = CacheState::WarmUp;
  FreqTable freq_;
  std::unordered_map<index_t, index_t> slot_of_;
  std::vector<index_t> slot_rows_;
  std::vector<T> store_;
  std::vector<index_t> prev_top_;
  index_t resident_ = 0;
  std::uint64_t hits_ = 0;
  std::uint64_t accesses_ = 0;
};

}  // namespace ttrec

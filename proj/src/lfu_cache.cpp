#include "ttrec/lfu_cache.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iterator>

namespace ttrec {

namespace {
constexpr std::uint64_t kFib = 0x9E3779B97F4A7C15ull;
constexpr double kMaxLoad = 0.7;
}  // namespace

FreqTable::FreqTable(std::size_t initial_capacity) {
  std::size_t cap = std::bit_ceil(std::max<std::size_t>(initial_capacity, 8));
  keys_.assign(cap, kEmpty);
  counts_.assign(cap, 0);
  shift_ = 64 - std::countr_zero(cap);
}

std::size_t FreqTable::slot_for(index_t key) const {
  std::size_t i = (static_cast<std::uint64_t>(key) * kFib) >> shift_;
  const std::size_t mask = keys_.size() - 1;
  while (keys_[i] != kEmpty && keys_[i] != key) i = (i + 1) & mask;
  return i;
}

void FreqTable::grow() {
  std::vector<index_t> old_keys = std::move(keys_);
  std::vector<std::uint64_t> old_counts = std::move(counts_);
  const std::size_t cap = old_keys.size() * 2;
  keys_.assign(cap, kEmpty);
  counts_.assign(cap, 0);
  shift_ = 64 - std::countr_zero(cap);
  for (std::size_t i = 0; i < old_keys.size(); ++i) {
    if (old_keys[i] == kEmpty) continue;
    const std::size_t j = slot_for(old_keys[i]);
    keys_[j] = old_keys[i];
    counts_[j] = old_counts[i];
  }
}

void FreqTable::increment(index_t key, std::uint64_t by) {
  require_arg(key >= 0, "frequency keys must be non-negative, got ", key);
  std::size_t i = slot_for(key);
  if (keys_[i] == kEmpty) {
    keys_[i] = key;
    counts_[i] = by;
    ++size_;
    if (static_cast<double>(size_) > kMaxLoad * static_cast<double>(keys_.size())) grow();
  } else {
    counts_[i] += by;
  }
}

std::uint64_t FreqTable::count(index_t key) const {
  if (key < 0) return 0;
  const std::size_t i = slot_for(key);
  return keys_[i] == kEmpty ? 0 : counts_[i];
}

void FreqTable::clear() {
  std::fill(keys_.begin(), keys_.end(), kEmpty);
  std::fill(counts_.begin(), counts_.end(), 0);
  size_ = 0;
}

void FreqTable::decay(double factor) {
  require_arg(factor >= 0.0 && factor <= 1.0, "decay factor must be in [0, 1], got ", factor);
  // rebuild: scaled-to-zero entries drop out, survivors rehash cleanly
  auto old = entries();
  clear();
  for (auto& [key, cnt] : old) {
    const auto scaled =
        static_cast<std::uint64_t>(std::floor(static_cast<double>(cnt) * factor));
    if (scaled > 0) increment(key, scaled);
  }
}

std::vector<std::pair<index_t, std::uint64_t>> FreqTable::entries() const {
  std::vector<std::pair<index_t, std::uint64_t>> out;
  out.reserve(size_);
  for (std::size_t i = 0; i < keys_.size(); ++i)
    if (keys_[i] != kEmpty) out.emplace_back(keys_[i], counts_[i]);
  return out;
}

std::vector<std::pair<index_t, std::uint64_t>> FreqTable::entries_sorted() const {
  auto out = entries();
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

std::vector<index_t> FreqTable::top_k(std::size_t k) const {
  auto all = entries();
  const auto cmp = [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  };
  if (k < all.size()) {
    std::nth_element(all.begin(), all.begin() + k, all.end(), cmp);
    all.resize(k);
  }
  std::sort(all.begin(), all.end(), cmp);
  std::vector<index_t> keys;
  keys.reserve(all.size());
  for (const auto& e : all) keys.push_back(e.first);
  return keys;
}

double hot_set_drift(std::span<const index_t> prev, std::span<const index_t> cur,
                     std::size_t k) {
  require_arg(k > 0, "hot_set_drift needs k > 0");
  std::vector<index_t> a(prev.begin(), prev.end());
  std::vector<index_t> b(cur.begin(), cur.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<index_t> sym;
  std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(),
                                std::back_inserter(sym));
  return static_cast<double>(sym.size()) / (2.0 * static_cast<double>(k));
}

}  // namespace ttrec

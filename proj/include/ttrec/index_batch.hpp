#pragma once

#include <string>
#include <vector>

#include "ttrec/common.hpp"

namespace ttrec {

enum class Pooling { Sum, Mean };

/// Ragged batch of per-sample index bags in the usual offsets encoding:
/// bag b covers indices[offsets[b] .. offsets[b+1]). weights, when present,
/// holds one per-lookup coefficient; empty means all ones. Mean pooling
/// divides the (weighted) sum by the bag's lookup count; empty bags pool
/// to zero.
struct IndexBatch {
  std::vector<index_t> indices;
  std::vector<index_t> offsets{0};
  std::vector<double> weights;  // empty or one per lookup
  Pooling pooling = Pooling::Sum;

  index_t num_bags() const { return static_cast<index_t>(offsets.size()) - 1; }
  index_t num_lookups() const { return static_cast<index_t>(indices.size()); }
  bool has_weights() const { return !weights.empty(); }
  double weight(index_t lookup) const { return weights.empty() ? 1.0 : weights[lookup]; }
  index_t bag_size(index_t b) const { return offsets[b + 1] - offsets[b]; }

  /// One single-index bag per entry.
  static IndexBatch singles(std::vector<index_t> idx, Pooling pooling = Pooling::Sum) {
    IndexBatch batch;
    batch.pooling = pooling;
    batch.offsets.resize(idx.size() + 1);
    for (size_t i = 0; i <= idx.size(); ++i) batch.offsets[i] = static_cast<index_t>(i);
    batch.indices = std::move(idx);
    return batch;
  }

  /// Structural checks plus index range [0, num_rows); names the table in
  /// range errors when a name is given.
  void validate(index_t num_rows, const std::string& table_name = {}) const {
    require_arg(!offsets.empty() && offsets.front() == 0, "offsets must start at 0");
    for (size_t b = 0; b + 1 < offsets.size(); ++b)
      require_arg(offsets[b] <= offsets[b + 1], "offsets must be non-decreasing");
    require_arg(offsets.back() == num_lookups(), "offsets end at ", offsets.back(),
                " but there are ", num_lookups(), " indices");
    require_arg(weights.empty() || static_cast<index_t>(weights.size()) == num_lookups(),
                "expected ", num_lookups(), " weights, got ", weights.size());
    for (index_t idx : indices) {
      if (idx < 0 || idx >= num_rows) {
        const std::string where =
            table_name.empty() ? std::string() : concat(" for table '", table_name, "'");
        throw std::out_of_range(concat("index ", idx, " out of range [0, ", num_rows, ")", where));
      }
    }
  }
};

}  // namespace ttrec

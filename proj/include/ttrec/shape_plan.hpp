#pragma once

#include <optional>
#include <span>
#include <vector>

#include "ttrec/common.hpp"

namespace ttrec {

inline constexpr int kMinTtDim = 2;
inline constexpr int kMaxTtDim = 8;

/// Shape metadata for one TT-compressed embedding table of logical size
/// (num_rows x emb_dim). Rows are indexed through the mixed-radix digits of
/// row_factors (most-significant digit first); columns through col_factors.
/// Core k (0-based) has logical shape (ranks[k], row_factors[k],
/// col_factors[k], ranks[k+1]) with ranks[0] = ranks[d] = 1.
struct ShapePlan {
  index_t num_rows = 0;
  index_t emb_dim = 0;
  int tt_dim = 0;
  std::vector<index_t> row_factors;
  std::vector<index_t> col_factors;
  std::vector<index_t> ranks;  // size tt_dim + 1

  /// Product of row_factors; >= num_rows, indices beyond num_rows are padding.
  index_t padded_rows() const;

  /// Total elements across all cores.
  index_t parameter_count() const;

  /// Elements of core k: ranks[k] * row_factors[k] * col_factors[k] * ranks[k+1].
  index_t core_size(int k) const;

  /// num_rows*emb_dim over parameter_count, reported as the nearest integer
  /// compression factor. The ratio is taken to one decimal place first and
  /// exact-half tenths round down, which is how the published table rows
  /// this is checked against were produced (e.g. 297.5 -> 297).
  index_t memory_reduction() const;

  /// Throws std::invalid_argument on inconsistent contents.
  void validate() const;

  bool operator==(const ShapePlan&) const = default;
};

/// Builds a plan. Row factors default to a balanced d-way cover of num_rows
/// (product >= num_rows, factors as equal as possible); col factors default to
/// the most balanced ordered factorization of emb_dim with every factor >= 2
/// (requires emb_dim to admit one, e.g. 16 -> [2,2,4] at d=3). Explicit
/// factors are validated instead: row product >= num_rows, col product ==
/// emb_dim, all factors >= 1. Ranks are [1, rank, ..., rank, 1], clipped per
/// position to the full-rank bound of the unfolding.
ShapePlan plan_shapes(index_t num_rows, index_t emb_dim, int tt_dim, index_t rank,
                      std::optional<std::vector<index_t>> row_factors = std::nullopt,
                      std::optional<std::vector<index_t>> col_factors = std::nullopt);

/// Mixed-radix digits of a flat index, most-significant first:
/// flat = sum_k digit[k] * prod_{j>k} radices[j]. Throws std::out_of_range
/// when flat is outside [0, prod radices).
std::vector<index_t> decompose_index(index_t flat, std::span<const index_t> radices);

/// Inverse of decompose_index; digits are range-checked.
index_t recompose_index(std::span<const index_t> digits, std::span<const index_t> radices);

}  // namespace ttrec

#include "ttrec/shape_plan.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ttrec {

namespace {

constexpr index_t kIndexMax = std::numeric_limits<index_t>::max();

index_t sat_mul(index_t a, index_t b) {
  if (a == 0 || b == 0) return 0;
  if (a > kIndexMax / b) return kIndexMax;
  return a * b;
}

index_t ceil_div(index_t a, index_t b) { return (a + b - 1) / b; }

index_t ipow_sat(index_t base, int e) {
  index_t p = 1;
  for (int i = 0; i < e; ++i) p = sat_mul(p, base);
  return p;
}

/// Smallest f >= 2 with f^k >= target.
index_t ceil_root(index_t target, int k) {
  if (target <= 1) return 2;
  index_t f = static_cast<index_t>(std::llround(std::pow(static_cast<double>(target), 1.0 / k)));
  f = std::max<index_t>(f - 2, 2);
  while (ipow_sat(f, k) < target) ++f;
  return f;
}

/// Greedy balanced cover: repeatedly take the k-th root of what is left.
/// Product >= rows and max/min stays small (~2 worst case).
std::vector<index_t> auto_row_factors(index_t rows, int d) {
  std::vector<index_t> factors;
  index_t remaining = rows;
  for (int k = d; k >= 1; --k) {
    index_t f = ceil_root(remaining, k);
    factors.push_back(f);
    remaining = ceil_div(remaining, f);
  }
  std::sort(factors.begin(), factors.end());
  return factors;
}

struct ColSearch {
  int d;
  std::vector<index_t> best;
  double best_ratio = std::numeric_limits<double>::infinity();
  std::vector<index_t> cur;

  void run(index_t remaining, int k) {
    if (k == d) {
      if (remaining != 1) return;
      double ratio = static_cast<double>(*std::max_element(cur.begin(), cur.end())) /
                     static_cast<double>(*std::min_element(cur.begin(), cur.end()));
      if (ratio < best_ratio - 1e-12 ||
          (ratio < best_ratio + 1e-12 && (best.empty() || cur < best))) {
        best_ratio = ratio;
        best = cur;
      }
      return;
    }
    for (index_t f = 2; f <= remaining; ++f) {
      if (remaining % f != 0) continue;
      cur.push_back(f);
      run(remaining / f, k + 1);
      cur.pop_back();
    }
  }
};

std::vector<index_t> auto_col_factors(index_t emb_dim, int d) {
  ColSearch s;
  s.d = d;
  s.run(emb_dim, 0);
  require_arg(!s.best.empty(), "emb_dim ", emb_dim, " has no ", d,
              "-way factorization with all factors >= 2; pass col_factors explicitly");
  return s.best;
}

}  // namespace

index_t ShapePlan::padded_rows() const {
  index_t p = 1;
  for (index_t m : row_factors) p = sat_mul(p, m);
  return p;
}

index_t ShapePlan::core_size(int k) const {
  return ranks[k] * row_factors[k] * col_factors[k] * ranks[k + 1];
}

index_t ShapePlan::parameter_count() const {
  index_t total = 0;
  for (int k = 0; k < tt_dim; ++k) {
    index_t s = core_size(k);
    total = (total > kIndexMax - s) ? kIndexMax : total + s;
  }
  return total;
}

index_t ShapePlan::memory_reduction() const {
  const index_t full = sat_mul(num_rows, emb_dim);
  const index_t params = parameter_count();
  require(params > 0, "memory_reduction: empty plan");
  // ratio rounded to one decimal place, then to integer with .5 tenths
  // rounding down: tenths = round_half_up(10*full/params).
  const index_t tenths = (sat_mul(20, full) + params) / (2 * params);
  return tenths / 10 + (tenths % 10 > 5 ? 1 : 0);
}

void ShapePlan::validate() const {
  require_arg(tt_dim >= kMinTtDim && tt_dim <= kMaxTtDim,
              "tt_dim must be in [", kMinTtDim, ", ", kMaxTtDim, "], got ", tt_dim);
  require_arg(num_rows >= 1, "num_rows must be positive, got ", num_rows);
  require_arg(emb_dim >= 1, "emb_dim must be positive, got ", emb_dim);
  const auto d = static_cast<size_t>(tt_dim);
  require_arg(row_factors.size() == d, "expected ", tt_dim, " row factors, got ",
              row_factors.size());
  require_arg(col_factors.size() == d, "expected ", tt_dim, " col factors, got ",
              col_factors.size());
  require_arg(ranks.size() == d + 1, "expected ", tt_dim + 1, " ranks, got ", ranks.size());
  for (index_t m : row_factors) require_arg(m >= 1, "row factor must be >= 1, got ", m);
  index_t colprod = 1;
  for (index_t n : col_factors) {
    require_arg(n >= 1, "col factor must be >= 1, got ", n);
    colprod = sat_mul(colprod, n);
  }
  require_arg(colprod == emb_dim, "col factors multiply to ", colprod, ", expected emb_dim ",
              emb_dim);
  require_arg(padded_rows() >= num_rows, "row factors multiply to ", padded_rows(),
              ", need >= num_rows ", num_rows);
  require_arg(ranks.front() == 1 && ranks.back() == 1, "boundary ranks must be 1");
  for (index_t r : ranks) require_arg(r >= 1, "ranks must be positive, got ", r);
}

ShapePlan plan_shapes(index_t num_rows, index_t emb_dim, int tt_dim, index_t rank,
                      std::optional<std::vector<index_t>> row_factors,
                      std::optional<std::vector<index_t>> col_factors) {
  require_arg(tt_dim >= kMinTtDim && tt_dim <= kMaxTtDim,
              "tt_dim must be in [", kMinTtDim, ", ", kMaxTtDim, "], got ", tt_dim);
  require_arg(num_rows >= 1, "num_rows must be positive, got ", num_rows);
  require_arg(emb_dim >= 1, "emb_dim must be positive, got ", emb_dim);
  require_arg(rank >= 1, "rank must be positive, got ", rank);

  ShapePlan plan;
  plan.num_rows = num_rows;
  plan.emb_dim = emb_dim;
  plan.tt_dim = tt_dim;
  plan.row_factors = row_factors ? *row_factors : auto_row_factors(num_rows, tt_dim);
  plan.col_factors = col_factors ? *col_factors : auto_col_factors(emb_dim, tt_dim);

  // interior ranks clipped to the full-rank bound of the matching unfolding
  plan.ranks.assign(static_cast<size_t>(tt_dim) + 1, 1);
  for (int k = 1; k < tt_dim; ++k) {
    index_t left = 1, right = 1;
    for (int j = 0; j < k; ++j) left = sat_mul(left, plan.row_factors[j] * plan.col_factors[j]);
    for (int j = k; j < tt_dim; ++j)
      right = sat_mul(right, plan.row_factors[j] * plan.col_factors[j]);
    plan.ranks[k] = std::min(rank, std::min(left, right));
  }
  plan.validate();
  return plan;
}

std::vector<index_t> decompose_index(index_t flat, std::span<const index_t> radices) {
  index_t total = 1;
  for (index_t r : radices) {
    require_arg(r >= 1, "radices must be positive, got ", r);
    total = sat_mul(total, r);
  }
  if (flat < 0 || flat >= total)
    throw std::out_of_range(concat("index ", flat, " out of range [0, ", total, ")"));
  std::vector<index_t> digits(radices.size());
  for (size_t k = radices.size(); k-- > 0;) {
    digits[k] = flat % radices[k];
    flat /= radices[k];
  }
  return digits;
}

index_t recompose_index(std::span<const index_t> digits, std::span<const index_t> radices) {
  require_arg(digits.size() == radices.size(), "digit/radix count mismatch: ", digits.size(),
              " vs ", radices.size());
  index_t flat = 0;
  for (size_t k = 0; k < radices.size(); ++k) {
    if (digits[k] < 0 || digits[k] >= radices[k])
      throw std::out_of_range(
          concat("digit ", digits[k], " out of range [0, ", radices[k], ") at position ", k));
    flat = flat * radices[k] + digits[k];
  }
  return flat;
}

}  // namespace ttrec

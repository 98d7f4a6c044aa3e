#pragma once

#include <cassert>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ttrec/common.hpp"
#include "ttrec/shape_plan.hpp"

namespace ttrec {

/// TT-compressed embedding table. Entry (i, j) of the logical
/// (padded_rows x emb_dim) matrix is the product of one matrix slice per
/// core: W(i,j) = C_1(:, i_1, j_1, :) * ... * C_d(:, i_d, j_d, :), where
/// (i_1..i_d) and (j_1..j_d) are the mixed-radix digits of i and j.
///
/// Core k has logical shape (R_{k-1}, m_k, n_k, R_k) but is stored with the
/// row digit outermost -- (m_k, R_{k-1}, n_k, R_k) physically -- so that
/// slicing on i_k yields one contiguous row-major (R_{k-1} x n_k*R_k) block,
/// which is exactly the operand the chained-product kernels consume.
template <Scalar T>
class TtTable {
 public:
  explicit TtTable(ShapePlan plan, std::string name = "tt-table")
      : plan_(std::move(plan)), name_(std::move(name)) {
    plan_.validate();
    const int d = plan_.tt_dim;
    cores_.resize(d);
    for (int k = 0; k < d; ++k) cores_[k].assign(plan_.core_size(k), T(0));
    row_suffix_.assign(d, 1);
    for (int k = d - 2; k >= 0; --k)
      row_suffix_[k] = row_suffix_[k + 1] * plan_.row_factors[k + 1];
  }

  const ShapePlan& plan() const { return plan_; }
  const std::string& name() const { return name_; }
  int dim() const { return plan_.tt_dim; }
  index_t rows() const { return plan_.num_rows; }
  index_t cols() const { return plan_.emb_dim; }

  std::span<T> core(int k) { return cores_[k]; }
  std::span<const T> core(int k) const { return cores_[k]; }

  /// Elements in one row-digit slice of core k: R_{k-1} * n_k * R_k.
  index_t slice_size(int k) const {
    return plan_.ranks[k] * plan_.col_factors[k] * plan_.ranks[k + 1];
  }

  /// Contiguous (R_{k-1} x n_k*R_k) row-major block for row digit i.
  T* slice(int k, index_t i) {
    assert(i >= 0 && i < plan_.row_factors[k]);
    return cores_[k].data() + i * slice_size(k);
  }
  const T* slice(int k, index_t i) const {
    assert(i >= 0 && i < plan_.row_factors[k]);
    return cores_[k].data() + i * slice_size(k);
  }

  /// Logical element access, shape (R_{k-1}, m_k, n_k, R_k).
  T& at(int k, index_t r1, index_t i, index_t j, index_t r2) {
    return cores_[k][offset(k, r1, i, j, r2)];
  }
  const T& at(int k, index_t r1, index_t i, index_t j, index_t r2) const {
    return cores_[k][offset(k, r1, i, j, r2)];
  }

  /// Row-digit expansion of a flat row index; out must hold dim() values.
  /// Valid over the padded range [0, padded_rows()).
  void decompose_row(index_t flat, index_t* out) const {
    assert(flat >= 0 && flat < plan_.padded_rows());
    for (int k = 0; k < plan_.tt_dim; ++k) {
      const index_t q = flat / row_suffix_[k];
      out[k] = q;
      flat -= q * row_suffix_[k];
    }
  }

  const std::vector<index_t>& row_suffix() const { return row_suffix_; }

  /// Bumped whenever core values change wholesale (init, sgd_step); lets
  /// saved forward contexts detect staleness.
  std::uint64_t mutation_counter() const { return mutation_counter_; }
  void mark_mutated() { ++mutation_counter_; }

 private:
  index_t offset(int k, index_t r1, index_t i, index_t j, index_t r2) const {
    const index_t rl = plan_.ranks[k];
    const index_t n = plan_.col_factors[k];
    const index_t rr = plan_.ranks[k + 1];
    assert(r1 >= 0 && r1 < rl && i >= 0 && i < plan_.row_factors[k]);
    assert(j >= 0 && j < n && r2 >= 0 && r2 < rr);
    return ((i * rl + r1) * n + j) * rr + r2;
  }

  ShapePlan plan_;
  std::string name_;
  std::vector<std::vector<T>> cores_;
  std::vector<index_t> row_suffix_;
  std::uint64_t mutation_counter_ = 0;
};

inline constexpr index_t kReconstructElementLimit = 10'000'000;

/// Materializes the padded dense matrix (padded_rows x emb_dim) by direct
/// rank-tuple contraction per entry. Deliberately shares no code with the
/// chained-product lookup path so the two can be checked against each other.
/// Refuses tables whose dense form exceeds kReconstructElementLimit elements.
template <Scalar T>
std::vector<T> reconstruct_full(const TtTable<T>& table) {
  const ShapePlan& plan = table.plan();
  const index_t rows = plan.padded_rows();
  const index_t n = plan.emb_dim;
  require_arg(rows * n <= kReconstructElementLimit, "reconstruct_full on table '", table.name(),
              "': ", rows * n, " elements exceeds limit ", kReconstructElementLimit);
  const int d = plan.tt_dim;

  // col-digit table, one row per embedding column
  std::vector<index_t> col_digits(static_cast<size_t>(n) * d);
  for (index_t j = 0; j < n; ++j) {
    auto digits = decompose_index(j, plan.col_factors);
    for (int k = 0; k < d; ++k) col_digits[j * d + k] = digits[k];
  }

  std::vector<T> out(static_cast<size_t>(rows) * n);
  std::vector<index_t> idig(d);
  std::vector<double> cur, next;
  for (index_t i = 0; i < rows; ++i) {
    table.decompose_row(i, idig.data());
    for (index_t j = 0; j < n; ++j) {
      const index_t* jdig = &col_digits[j * d];
      cur.assign(1, 1.0);
      for (int k = 0; k < d; ++k) {
        const index_t rr = plan.ranks[k + 1];
        next.assign(rr, 0.0);
        for (index_t r1 = 0; r1 < plan.ranks[k]; ++r1)
          for (index_t r2 = 0; r2 < rr; ++r2)
            next[r2] += cur[r1] * static_cast<double>(table.at(k, r1, idig[k], jdig[k], r2));
        cur.swap(next);
      }
      out[i * n + j] = static_cast<T>(cur[0]);
    }
  }
  return out;
}

}  // namespace ttrec

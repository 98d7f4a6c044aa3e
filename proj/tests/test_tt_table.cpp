#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>

#include "ttrec/rng.hpp"
#include "ttrec/tt_table.hpp"

using namespace ttrec;

namespace {

template <Scalar T>
void fill_random(TtTable<T>& t, std::uint64_t seed) {
  for (int k = 0; k < t.dim(); ++k) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(k));
    for (T& v : t.core(k)) v = static_cast<T>(rng.normal());
  }
  t.mark_mutated();
}

// Entry oracle by explicit enumeration of every interior rank tuple. Shares
// nothing with reconstruct_full's running-vector contraction.
double entry_oracle(const TtTable<double>& t, index_t i, index_t j) {
  const ShapePlan& p = t.plan();
  const int d = p.tt_dim;
  std::vector<index_t> idig(d);
  t.decompose_row(i, idig.data());
  const std::vector<index_t> jdig = decompose_index(j, p.col_factors);
  double total = 0.0;
  std::vector<index_t> r(d + 1, 0);
  std::function<void(int, double)> rec = [&](int k, double prod) {
    if (k == d) {
      total += prod;
      return;
    }
    for (index_t rk = 0; rk < p.ranks[k + 1]; ++rk) {
      r[k + 1] = rk;
      rec(k + 1, prod * t.at(k, r[k], idig[k], jdig[k], rk));
    }
  };
  rec(0, 1.0);
  return total;
}

}  // namespace

TEST_CASE("slices are contiguous row-digit blocks of the stored core") {
  ShapePlan plan = plan_shapes(30, 16, 3, 4);
  TtTable<float> t(plan, "layout");
  for (int k = 0; k < t.dim(); ++k) {
    // write a distinct value through the logical accessor...
    float v = 1.0f;
    for (index_t i = 0; i < plan.row_factors[k]; ++i)
      for (index_t r1 = 0; r1 < plan.ranks[k]; ++r1)
        for (index_t j = 0; j < plan.col_factors[k]; ++j)
          for (index_t r2 = 0; r2 < plan.ranks[k + 1]; ++r2)
            t.at(k, r1, i, j, r2) = v += 1.0f;
    // ...and read it back through raw slice pointers
    const index_t n = plan.col_factors[k];
    const index_t rr = plan.ranks[k + 1];
    REQUIRE(t.slice_size(k) == plan.ranks[k] * n * rr);
    for (index_t i = 0; i < plan.row_factors[k]; ++i) {
      const float* s = t.slice(k, i);
      CHECK(s == t.core(k).data() + i * t.slice_size(k));
      for (index_t r1 = 0; r1 < plan.ranks[k]; ++r1)
        for (index_t j = 0; j < n; ++j)
          for (index_t r2 = 0; r2 < rr; ++r2)
            CHECK(s[(r1 * n + j) * rr + r2] == t.at(k, r1, i, j, r2));
    }
  }
}

TEST_CASE("decompose_row matches the generic mixed-radix expansion") {
  ShapePlan plan = plan_shapes(142572, 16, 3, 8, std::vector<index_t>{50, 52, 55},
                               std::vector<index_t>{2, 2, 4});
  TtTable<float> t(plan);
  Rng rng(3);
  std::vector<index_t> dig(3);
  for (int rep = 0; rep < 2000; ++rep) {
    const index_t row = rng.uniform_int(0, plan.padded_rows());
    t.decompose_row(row, dig.data());
    CHECK(dig == decompose_index(row, plan.row_factors));
  }
}

TEST_CASE("a rank-1 table is the elementwise product of its core slices") {
  ShapePlan plan = plan_shapes(24, 8, 3, 1, std::vector<index_t>{2, 3, 4},
                               std::vector<index_t>{2, 2, 2});
  TtTable<double> t(plan);
  fill_random(t, 11);
  std::vector<double> dense = reconstruct_full(t);
  std::vector<index_t> idig(3);
  for (index_t i = 0; i < plan.padded_rows(); ++i) {
    t.decompose_row(i, idig.data());
    for (index_t j = 0; j < plan.emb_dim; ++j) {
      const std::vector<index_t> jdig = decompose_index(j, plan.col_factors);
      double prod = 1.0;
      for (int k = 0; k < 3; ++k) prod *= t.at(k, 0, idig[k], jdig[k], 0);
      CHECK(dense[i * plan.emb_dim + j] == doctest::Approx(prod).epsilon(1e-12));
    }
  }
}

TEST_CASE("reconstruct_full agrees with rank-tuple enumeration") {
  Rng rng(5);
  for (int trial = 0; trial < 12; ++trial) {
    const int d = static_cast<int>(rng.uniform_int(2, 5));
    const index_t rank = rng.uniform_int(1, 4);
    const index_t rows = rng.uniform_int(5, 40);
    std::optional<std::vector<index_t>> cols;
    if (d == 4) cols = std::vector<index_t>{2, 2, 2, 2};
    ShapePlan plan = plan_shapes(rows, 16, d, rank, std::nullopt, cols);
    TtTable<double> t(plan);
    fill_random(t, 100 + static_cast<std::uint64_t>(trial));
    const std::vector<double> dense = reconstruct_full(t);
    REQUIRE(static_cast<index_t>(dense.size()) == plan.padded_rows() * plan.emb_dim);
    for (int rep = 0; rep < 50; ++rep) {
      const index_t i = rng.uniform_int(0, plan.padded_rows());
      const index_t j = rng.uniform_int(0, plan.emb_dim);
      CHECK(dense[i * plan.emb_dim + j] ==
            doctest::Approx(entry_oracle(t, i, j)).epsilon(1e-12));
    }
  }
}

TEST_CASE("new tables are zero and mutation marks tick") {
  TtTable<float> t(plan_shapes(100, 16, 3, 4));
  for (int k = 0; k < t.dim(); ++k)
    for (float v : t.core(k)) CHECK(v == 0.0f);
  const std::uint64_t before = t.mutation_counter();
  t.mark_mutated();
  CHECK(t.mutation_counter() == before + 1);
}

TEST_CASE("reconstruct_full refuses oversized tables and names the offender") {
  TtTable<float> t(plan_shapes(10000000, 16, 3, 2), "huge");
  CHECK_THROWS_WITH_AS((void)reconstruct_full(t), doctest::Contains("huge"),
                       std::invalid_argument);
}

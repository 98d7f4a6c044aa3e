#pragma once

#include <omp.h>

#include <algorithm>
#include <cassert>
#include <memory>
#include <span>
#include <vector>

#include "ttrec/embedding_stats.hpp"
#include "ttrec/gemm.hpp"
#include "ttrec/index_batch.hpp"
#include "ttrec/tt_table.hpp"

namespace ttrec {

/// Lookups per kernel chunk; bounds transient workspace at
/// micro_batch * max stage width elements per worker.
inline constexpr index_t kDefaultMicroBatch = 2048;

namespace detail {

/// Stage geometry of the left-to-right chain. After absorbing core k the
/// running product u_k is a (prefix[k] x ranks[k+1]) row-major matrix with
/// width[k] = prefix[k] * ranks[k+1] elements; width[d-1] = emb_dim.
struct ChainDims {
  int d = 0;
  std::vector<index_t> prefix;  // prefix[k] = prod_{j<=k} col_factors[j]
  std::vector<index_t> width;
  index_t max_width = 0;

  static ChainDims of(const ShapePlan& plan) {
    ChainDims c;
    c.d = plan.tt_dim;
    c.prefix.resize(c.d);
    c.width.resize(c.d);
    index_t p = 1;
    for (int k = 0; k < c.d; ++k) {
      p *= plan.col_factors[k];
      c.prefix[k] = p;
      c.width[k] = p * plan.ranks[k + 1];
      c.max_width = std::max(c.max_width, c.width[k]);
    }
    return c;
  }
};

/// Contiguous bag ranges with roughly equal lookup counts, one per worker.
inline std::vector<index_t> partition_bags(const IndexBatch& batch, int workers) {
  const index_t bags = batch.num_bags();
  const index_t lookups = batch.num_lookups();
  std::vector<index_t> bounds(static_cast<size_t>(workers) + 1, bags);
  bounds[0] = 0;
  for (int w = 1; w < workers; ++w) {
    const index_t target = lookups * w / workers;
    auto it = std::lower_bound(batch.offsets.begin(), batch.offsets.end(), target);
    index_t b = static_cast<index_t>(it - batch.offsets.begin());
    bounds[w] = std::clamp(b, bounds[w - 1], bags);
  }
  return bounds;
}

}  // namespace detail

/// Per-core gradient accumulator; mirrors the storage layout of a table's
/// cores exactly.
template <Scalar T>
struct CoreGradients {
  std::vector<std::vector<T>> cores;

  static CoreGradients zeros_like(const TtTable<T>& table) {
    CoreGradients g;
    g.cores.resize(table.dim());
    for (int k = 0; k < table.dim(); ++k) g.cores[k].assign(table.core(k).size(), T(0));
    return g;
  }

  void add(const CoreGradients& other) {
    assert(cores.size() == other.cores.size());
    for (size_t k = 0; k < cores.size(); ++k) {
      assert(cores[k].size() == other.cores[k].size());
      T* dst = cores[k].data();
      const T* src = other.cores[k].data();
      for (size_t i = 0; i < cores[k].size(); ++i) dst[i] += src[i];
    }
  }

  index_t total_elements() const {
    index_t n = 0;
    for (const auto& c : cores) n += static_cast<index_t>(c.size());
    return n;
  }
};

/// Saved state from forward_bags that backward_bags consumes. When
/// save_intermediates was set, partials[k] (for 1 <= k <= d-2) holds the
/// per-lookup stage-k products; otherwise backward recomputes them chunk by
/// chunk. The mutation snapshot catches use of a context after the table's
/// cores have changed (e.g. after sgd_step).
template <Scalar T>
struct ForwardContext {
  const TtTable<T>* table = nullptr;
  index_t num_lookups = 0;
  index_t num_bags = 0;
  index_t micro_batch = kDefaultMicroBatch;
  bool saved = false;
  std::uint64_t mutation_snapshot = 0;
  std::vector<std::vector<T>> partials;
};

template <Scalar T>
struct ForwardResult {
  std::vector<T> output;  // num_bags x emb_dim, row-major
  ForwardContext<T> context;
};

/// Materializes one embedding row by the chained product; out.size() must be
/// emb_dim. Row must be a real (unpadded) row index.
template <Scalar T>
void lookup_row(const TtTable<T>& table, index_t row, std::span<T> out) {
  const ShapePlan& plan = table.plan();
  if (row < 0 || row >= plan.num_rows)
    throw std::out_of_range(concat("index ", row, " out of range [0, ", plan.num_rows,
                                   ") for table '", table.name(), "'"));
  require_arg(static_cast<index_t>(out.size()) == plan.emb_dim, "lookup_row: out has ",
              out.size(), " elements, expected ", plan.emb_dim);
  const auto dims = detail::ChainDims::of(plan);
  const int d = plan.tt_dim;
  index_t digits[kMaxTtDim];
  table.decompose_row(row, digits);

  std::vector<T> ping(dims.max_width), pong(dims.max_width);
  const T* u = table.slice(0, digits[0]);
  T* cur = ping.data();
  T* nxt = pong.data();
  for (int k = 1; k < d; ++k) {
    T* dst = (k == d - 1) ? out.data() : cur;
    matmul(u, table.slice(k, digits[k]), dst, dims.prefix[k - 1], plan.ranks[k],
           plan.col_factors[k] * plan.ranks[k + 1]);
    u = dst;
    std::swap(cur, nxt);
  }
  EmbeddingStats::add_rows(1);
}

template <Scalar T>
std::vector<T> lookup_row(const TtTable<T>& table, index_t row) {
  std::vector<T> out(table.cols());
  lookup_row(table, row, std::span<T>(out));
  return out;
}

/// Embedding-bag forward pass. Each lookup's row is built by the chained
/// product in chunks of at most micro_batch lookups; bags are pooled with
/// the batch's weights and pooling mode. Workers own contiguous bag ranges
/// and accumulate each bag in ascending lookup order, so the output is
/// bit-identical for any thread count and any micro_batch.
template <Scalar T>
ForwardResult<T> forward_bags(const TtTable<T>& table, const IndexBatch& batch,
                              index_t micro_batch = kDefaultMicroBatch,
                              bool save_intermediates = false) {
  const ShapePlan& plan = table.plan();
  batch.validate(plan.num_rows, table.name());
  require_arg(micro_batch >= 1, "micro_batch must be positive, got ", micro_batch);

  const auto dims = detail::ChainDims::of(plan);
  const int d = plan.tt_dim;
  const index_t n_emb = plan.emb_dim;
  const index_t lookups = batch.num_lookups();
  const index_t bags = batch.num_bags();

  ForwardResult<T> result;
  result.output.assign(static_cast<size_t>(bags) * n_emb, T(0));
  ForwardContext<T>& ctx = result.context;
  ctx.table = &table;
  ctx.num_lookups = lookups;
  ctx.num_bags = bags;
  ctx.micro_batch = micro_batch;
  ctx.saved = save_intermediates;
  ctx.mutation_snapshot = table.mutation_counter();
  ctx.partials.resize(d);
  if (save_intermediates)
    for (int k = 1; k <= d - 2; ++k)
      ctx.partials[k].resize(static_cast<size_t>(lookups) * dims.width[k]);

  const int workers = omp_get_max_threads();
  const auto bounds = detail::partition_bags(batch, workers);
  T* out = result.output.data();

#pragma omp parallel num_threads(workers)
  {
    const int w = omp_get_thread_num();
    const index_t bag_lo = bounds[w], bag_hi = bounds[w + 1];
    const index_t t_lo = batch.offsets[bag_lo], t_hi = batch.offsets[bag_hi];
    if (t_lo < t_hi || bag_lo < bag_hi) {
      const index_t cap = std::max<index_t>(std::min(micro_batch, t_hi - t_lo), 1);
      detail::TrackedBuffer<index_t> digits(static_cast<size_t>(cap) * d);
      detail::TrackedBuffer<T> final_buf(static_cast<size_t>(cap) * n_emb);
      std::vector<std::unique_ptr<detail::TrackedBuffer<T>>> stage;
      stage.resize(d);
      if (!save_intermediates)
        for (int k = 1; k <= d - 2; ++k)
          stage[k] = std::make_unique<detail::TrackedBuffer<T>>(static_cast<size_t>(cap) *
                                                                dims.width[k]);

      index_t cur_bag = bag_lo;
      for (index_t chunk = t_lo; chunk < t_hi; chunk += cap) {
        const index_t len = std::min(cap, t_hi - chunk);
        for (index_t t = 0; t < len; ++t)
          table.decompose_row(batch.indices[chunk + t], digits.data() + t * d);

        for (int k = 1; k < d; ++k) {
          const index_t wk = plan.col_factors[k] * plan.ranks[k + 1];
          for (index_t t = 0; t < len; ++t) {
            const index_t* dig = digits.data() + t * d;
            const T* u_prev =
                (k == 1) ? table.slice(0, dig[0])
                         : (save_intermediates
                                ? ctx.partials[k - 1].data() + (chunk + t) * dims.width[k - 1]
                                : stage[k - 1]->data() + t * dims.width[k - 1]);
            T* u_out = (k == d - 1)
                           ? final_buf.data() + t * n_emb
                           : (save_intermediates
                                  ? ctx.partials[k].data() + (chunk + t) * dims.width[k]
                                  : stage[k]->data() + t * dims.width[k]);
            matmul(u_prev, table.slice(k, dig[k]), u_out, dims.prefix[k - 1], plan.ranks[k], wk);
          }
        }
        EmbeddingStats::add_rows(static_cast<std::uint64_t>(len));

        for (index_t t = 0; t < len; ++t) {
          const index_t g = chunk + t;
          while (g >= batch.offsets[cur_bag + 1]) ++cur_bag;
          axpy(static_cast<T>(batch.weight(g)), final_buf.data() + t * n_emb,
               out + cur_bag * n_emb, n_emb);
        }
      }

      if (batch.pooling == Pooling::Mean) {
        for (index_t b = bag_lo; b < bag_hi; ++b) {
          const index_t sz = batch.bag_size(b);
          if (sz > 1) {
            const T inv = static_cast<T>(1.0 / static_cast<double>(sz));
            T* row = out + b * n_emb;
            for (index_t j = 0; j < n_emb; ++j) row[j] *= inv;
          }
        }
      }
    }
  }
  return result;
}

/// Backward pass of forward_bags: accumulates loss gradients into per-core
/// buffers and leaves the table untouched. grad_output is (num_bags x
/// emb_dim). Workers own the same contiguous lookup ranges as forward and
/// merge their private accumulators in worker order, so the result is
/// deterministic for a fixed thread count.
template <Scalar T>
CoreGradients<T> backward_bags(const TtTable<T>& table, const IndexBatch& batch,
                               const ForwardContext<T>& ctx, std::span<const T> grad_output) {
  const ShapePlan& plan = table.plan();
  batch.validate(plan.num_rows, table.name());
  require_arg(ctx.table == &table, "forward context belongs to a different table");
  require_arg(ctx.num_lookups == batch.num_lookups() && ctx.num_bags == batch.num_bags(),
              "forward context does not match this batch (", ctx.num_lookups, "/", ctx.num_bags,
              " vs ", batch.num_lookups(), "/", batch.num_bags(), ")");
  require_arg(ctx.mutation_snapshot == table.mutation_counter(),
              "stale forward context for table '", table.name(),
              "': cores changed since the forward pass");
  require_arg(static_cast<index_t>(grad_output.size()) == batch.num_bags() * plan.emb_dim,
              "grad_output has ", grad_output.size(), " elements, expected ",
              batch.num_bags() * plan.emb_dim);

  const auto dims = detail::ChainDims::of(plan);
  const int d = plan.tt_dim;
  const index_t n_emb = plan.emb_dim;

  const int workers = omp_get_max_threads();
  const auto bounds = detail::partition_bags(batch, workers);
  std::vector<CoreGradients<T>> local(workers);

#pragma omp parallel num_threads(workers)
  {
    const int w = omp_get_thread_num();
    local[w] = CoreGradients<T>::zeros_like(table);
    const index_t bag_lo = bounds[w], bag_hi = bounds[w + 1];
    const index_t t_lo = batch.offsets[bag_lo], t_hi = batch.offsets[bag_hi];
    if (t_lo < t_hi) {
      const index_t cap = std::max<index_t>(std::min(ctx.micro_batch, t_hi - t_lo), 1);
      detail::TrackedBuffer<index_t> digits(static_cast<size_t>(cap) * d);
      detail::TrackedBuffer<T> ping(dims.max_width), pong(dims.max_width);
      std::vector<std::unique_ptr<detail::TrackedBuffer<T>>> stage(d);
      if (!ctx.saved)
        for (int k = 1; k <= d - 2; ++k)
          stage[k] = std::make_unique<detail::TrackedBuffer<T>>(static_cast<size_t>(cap) *
                                                                dims.width[k]);

      index_t cur_bag = bag_lo;
      for (index_t chunk = t_lo; chunk < t_hi; chunk += cap) {
        const index_t len = std::min(cap, t_hi - chunk);
        for (index_t t = 0; t < len; ++t)
          table.decompose_row(batch.indices[chunk + t], digits.data() + t * d);

        if (!ctx.saved) {
          // rebuild the stage products this chunk needs, same order as forward
          for (int k = 1; k <= d - 2; ++k) {
            const index_t wk = plan.col_factors[k] * plan.ranks[k + 1];
            for (index_t t = 0; t < len; ++t) {
              const index_t* dig = digits.data() + t * d;
              const T* u_prev = (k == 1) ? table.slice(0, dig[0])
                                         : stage[k - 1]->data() + t * dims.width[k - 1];
              matmul(u_prev, table.slice(k, dig[k]), stage[k]->data() + t * dims.width[k],
                     dims.prefix[k - 1], plan.ranks[k], wk);
            }
          }
        }

        for (index_t t = 0; t < len; ++t) {
          const index_t g = chunk + t;
          while (g >= batch.offsets[cur_bag + 1]) ++cur_bag;
          double alpha = batch.weight(g);
          if (batch.pooling == Pooling::Mean) alpha /= static_cast<double>(batch.bag_size(cur_bag));
          const index_t* dig = digits.data() + t * d;

          // D starts as d(loss)/d(row) and walks back down the chain
          T* dcur = ping.data();
          T* dnxt = pong.data();
          {
            const T a = static_cast<T>(alpha);
            const T* grow = grad_output.data() + cur_bag * n_emb;
            for (index_t j = 0; j < n_emb; ++j) dcur[j] = a * grow[j];
          }
          for (int k = d - 1; k >= 1; --k) {
            const index_t pk = dims.prefix[k - 1];
            const index_t wk = plan.col_factors[k] * plan.ranks[k + 1];
            const T* u_prev =
                (k == 1) ? table.slice(0, dig[0])
                         : (ctx.saved ? ctx.partials[k - 1].data() + g * dims.width[k - 1]
                                      : stage[k - 1]->data() + t * dims.width[k - 1]);
            matmul_atb_acc(u_prev, dcur,
                           local[w].cores[k].data() + dig[k] * table.slice_size(k), pk,
                           plan.ranks[k], wk);
            matmul_abt(dcur, table.slice(k, dig[k]), dnxt, pk, wk, plan.ranks[k]);
            std::swap(dcur, dnxt);
          }
          axpy(T(1), dcur, local[w].cores[0].data() + dig[0] * table.slice_size(0),
               table.slice_size(0));
        }
      }
    }
  }

  CoreGradients<T> out = std::move(local[0]);
  for (int w = 1; w < workers; ++w) out.add(local[w]);
  return out;
}

/// Plain SGD update: core -= lr * grad. Invalidates saved forward contexts.
template <Scalar T>
void sgd_step(TtTable<T>& table, const CoreGradients<T>& grads, double lr) {
  require_arg(static_cast<int>(grads.cores.size()) == table.dim(),
              "gradient core count mismatch");
  const T step = static_cast<T>(lr);
  for (int k = 0; k < table.dim(); ++k) {
    auto core = table.core(k);
    require_arg(grads.cores[k].size() == core.size(), "gradient shape mismatch on core ", k);
    const T* g = grads.cores[k].data();
    T* c = core.data();
    const index_t n = static_cast<index_t>(core.size());
#pragma omp parallel for schedule(static)
    for (index_t i = 0; i < n; ++i) c[i] -= step * g[i];
  }
  table.mark_mutated();
}

namespace ref {

/// Serial reference forward: scalar loops, no chunking, no OpenMP. Kept as
/// an independent check and as the benchmark baseline.
template <Scalar T>
std::vector<T> forward_bags(const TtTable<T>& table, const IndexBatch& batch) {
  const ShapePlan& plan = table.plan();
  batch.validate(plan.num_rows, table.name());
  const int d = plan.tt_dim;
  const index_t n_emb = plan.emb_dim;
  std::vector<T> out(static_cast<size_t>(batch.num_bags()) * n_emb, T(0));
  std::vector<T> cur, nxt;
  index_t digits[kMaxTtDim];
  for (index_t b = 0; b < batch.num_bags(); ++b) {
    T* orow = out.data() + b * n_emb;
    for (index_t t = batch.offsets[b]; t < batch.offsets[b + 1]; ++t) {
      table.decompose_row(batch.indices[t], digits);
      index_t rows = plan.col_factors[0];  // leading extent of the running product
      cur.assign(table.slice(0, digits[0]),
                 table.slice(0, digits[0]) + table.slice_size(0));
      for (int k = 1; k < d; ++k) {
        const index_t rk = plan.ranks[k];
        const index_t wk = plan.col_factors[k] * plan.ranks[k + 1];
        nxt.assign(static_cast<size_t>(rows) * wk, T(0));
        for (index_t i = 0; i < rows; ++i)
          for (index_t p = 0; p < rk; ++p) {
            const T a = cur[i * rk + p];
            const T* srow = table.slice(k, digits[k]) + p * wk;
            for (index_t j = 0; j < wk; ++j) nxt[i * wk + j] += a * srow[j];
          }
        cur.swap(nxt);
        rows *= plan.col_factors[k];
      }
      const T alpha = static_cast<T>(batch.weight(t));
      for (index_t j = 0; j < n_emb; ++j) orow[j] += alpha * cur[j];
    }
    if (batch.pooling == Pooling::Mean) {
      const index_t sz = batch.bag_size(b);
      if (sz > 1) {
        const T inv = static_cast<T>(1.0 / static_cast<double>(sz));
        for (index_t j = 0; j < n_emb; ++j) orow[j] *= inv;
      }
    }
  }
  return out;
}

/// Serial reference backward; recomputes every stage product per lookup.
template <Scalar T>
CoreGradients<T> backward_bags(const TtTable<T>& table, const IndexBatch& batch,
                               std::span<const T> grad_output) {
  const ShapePlan& plan = table.plan();
  batch.validate(plan.num_rows, table.name());
  require_arg(static_cast<index_t>(grad_output.size()) == batch.num_bags() * plan.emb_dim,
              "grad_output has ", grad_output.size(), " elements, expected ",
              batch.num_bags() * plan.emb_dim);
  const int d = plan.tt_dim;
  const index_t n_emb = plan.emb_dim;
  const auto dims = detail::ChainDims::of(plan);
  auto grads = CoreGradients<T>::zeros_like(table);
  index_t digits[kMaxTtDim];
  std::vector<std::vector<T>> u(d);  // u[k]: running product after core k
  std::vector<T> dcur(dims.max_width), dnxt(dims.max_width);

  for (index_t b = 0; b < batch.num_bags(); ++b) {
    for (index_t t = batch.offsets[b]; t < batch.offsets[b + 1]; ++t) {
      table.decompose_row(batch.indices[t], digits);
      u[0].assign(table.slice(0, digits[0]), table.slice(0, digits[0]) + table.slice_size(0));
      for (int k = 1; k < d; ++k) {
        const index_t pk = dims.prefix[k - 1];
        const index_t rk = plan.ranks[k];
        const index_t wk = plan.col_factors[k] * plan.ranks[k + 1];
        u[k].assign(static_cast<size_t>(pk) * wk, T(0));
        for (index_t i = 0; i < pk; ++i)
          for (index_t p = 0; p < rk; ++p) {
            const T a = u[k - 1][i * rk + p];
            const T* srow = table.slice(k, digits[k]) + p * wk;
            for (index_t j = 0; j < wk; ++j) u[k][i * wk + j] += a * srow[j];
          }
      }
      double alpha = batch.weight(t);
      if (batch.pooling == Pooling::Mean) alpha /= static_cast<double>(batch.bag_size(b));
      {
        const T a = static_cast<T>(alpha);
        const T* grow = grad_output.data() + b * n_emb;
        for (index_t j = 0; j < n_emb; ++j) dcur[j] = a * grow[j];
      }
      for (int k = d - 1; k >= 1; --k) {
        const index_t pk = dims.prefix[k - 1];
        const index_t rk = plan.ranks[k];
        const index_t wk = plan.col_factors[k] * plan.ranks[k + 1];
        T* gslice = grads.cores[k].data() + digits[k] * table.slice_size(k);
        const T* uprev = u[k - 1].data();
        for (index_t i = 0; i < pk; ++i)
          for (index_t p = 0; p < rk; ++p) {
            const T a = uprev[i * rk + p];
            for (index_t j = 0; j < wk; ++j) gslice[p * wk + j] += a * dcur[i * wk + j];
          }
        const T* slice = table.slice(k, digits[k]);
        for (index_t i = 0; i < pk; ++i)
          for (index_t p = 0; p < rk; ++p) {
            T acc = T(0);
            for (index_t j = 0; j < wk; ++j) acc += dcur[i * wk + j] * slice[p * wk + j];
            dnxt[i * rk + p] = acc;
          }
        std::swap(dcur, dnxt);
      }
      T* g0 = grads.cores[0].data() + digits[0] * table.slice_size(0);
      for (index_t j = 0; j < table.slice_size(0); ++j) g0[j] += dcur[j];
    }
  }
  return grads;
}

}  // namespace ref
}  // namespace ttrec

#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ttrec/checkpoint.hpp"
#include "ttrec/data.hpp"
#include "ttrec/embedding_ops.hpp"
#include "ttrec/initializer.hpp"
#include "ttrec/lfu_cache.hpp"
#include "ttrec/log.hpp"
#include "ttrec/mlp.hpp"

namespace ttrec {

enum class InteractionKind { Dot, Concat };

struct TableConfig {
  index_t num_rows = 0;
  bool use_tt = true;
  int tt_dim = 3;
  index_t rank = 8;
  std::optional<ShapePlan> plan;  // overrides (num_rows, tt_dim, rank) when set
  bool use_cache = false;
  index_t cache_capacity = 0;     // 0 -> 0.01% of rows
};

struct ModelConfig {
  index_t dense_features = 3;
  index_t emb_dim = 16;
  std::vector<TableConfig> tables;
  std::vector<index_t> bottom_layers = {16};  // last entry must equal emb_dim
  std::vector<index_t> top_layers = {8, 1};   // last entry must be 1
  InteractionKind interaction = InteractionKind::Dot;
};

struct TrainConfig {
  index_t iterations = 1000;
  index_t batch_size = 128;
  double lr = 0.05;
  double warmup_fraction = 0.1;   // cache warm-up, as a fraction of iterations
  index_t refresh_period = 1000;  // cache hot-set refresh cadence (iterations)
  index_t micro_batch = kDefaultMicroBatch;
  bool save_intermediates = true;
  std::uint64_t seed = 0;
  InitSpec tt_init = InitSpec::sampled_gaussian();
  double divergence_limit = 30.0;  // abort when loss is non-finite or above this
  index_t eval_batches = 20;
  index_t metrics_every = 1;
  bool collect_timing = true;  // false pins the ms column to 0 for byte-stable output
};

struct MetricsRow {
  index_t iter = 0;
  double loss = 0, accuracy = 0, hit_rate = 0, ms = 0;
};

struct Metrics {
  std::vector<MetricsRow> rows;
  double final_loss = 0, final_accuracy = 0;
  index_t total_params = 0;

  void write_csv(std::ostream& os, bool include_timing = true) const {
    os << "iter,loss,accuracy,hit_rate,ms_per_iter\n";
    char buf[160];
    for (const MetricsRow& r : rows) {
      std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g\n",
                    static_cast<long long>(r.iter), r.loss, r.accuracy, r.hit_rate,
                    include_timing ? r.ms : 0.0);
      os << buf;
    }
  }
};

/// Numerically stable mean binary cross-entropy on logits; optionally fills
/// d(loss)/d(logit) = (sigmoid(x) - y) / batch.
template <Scalar T>
double bce_with_logits(std::span<const T> logits, const std::vector<double>& labels,
                       std::vector<T>* dlogits = nullptr) {
  const size_t n = labels.size();
  require_arg(logits.size() == n, "logits/labels size mismatch");
  require_arg(n > 0, "empty batch");
  if (dlogits) dlogits->resize(n);
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(logits[i]);
    const double y = labels[i];
    total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    if (dlogits) {
      const double sig = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      (*dlogits)[i] = static_cast<T>((sig - y) / static_cast<double>(n));
    }
  }
  return total / static_cast<double>(n);
}

/// Fraction of samples where sigmoid(logit) thresholded at 0.5 (i.e. logit
/// > 0) matches the label.
template <Scalar T>
double binary_accuracy(std::span<const T> logits, const std::vector<double>& labels) {
  require_arg(logits.size() == labels.size(), "logits/labels size mismatch");
  if (labels.empty()) return 0.0;
  size_t hit = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    const bool pred = logits[i] > T(0);
    if (pred == (labels[i] > 0.5)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

/// Sparse per-row gradient accumulator for uncompressed tables.
template <Scalar T>
class RowGradients {
 public:
  explicit RowGradients(index_t emb_dim = 0) : emb_dim_(emb_dim) {}

  T* row_for(index_t row) {
    auto [it, inserted] = pos_.try_emplace(row, static_cast<index_t>(rows_.size()));
    if (inserted) {
      rows_.push_back(row);
      data_.resize(data_.size() + emb_dim_, T(0));
    }
    return data_.data() + it->second * emb_dim_;
  }
  const std::vector<index_t>& rows() const { return rows_; }
  const T* row(std::size_t i) const { return data_.data() + i * emb_dim_; }
  bool empty() const { return rows_.empty(); }
  void clear() {
    pos_.clear();
    rows_.clear();
    data_.clear();
  }

 private:
  index_t emb_dim_;
  std::unordered_map<index_t, index_t> pos_;
  std::vector<index_t> rows_;
  std::vector<T> data_;
};

/// One categorical feature: a TT-compressed table (optionally fronted by an
/// LFU cache of uncompressed rows) or a plain dense table.
template <Scalar T>
class EmbeddingLayer {
 public:
  EmbeddingLayer(const TableConfig& cfg, index_t emb_dim, std::string name)
      : cfg_(cfg), emb_dim_(emb_dim), name_(std::move(name)), row_grads_(emb_dim) {
    require_arg(cfg.num_rows >= 1, "table '", name_, "': num_rows must be positive");
    if (cfg_.use_tt) {
      ShapePlan plan = cfg_.plan ? *cfg_.plan
                                 : plan_shapes(cfg_.num_rows, emb_dim, cfg_.tt_dim, cfg_.rank);
      require_arg(plan.num_rows == cfg_.num_rows && plan.emb_dim == emb_dim,
                  "table '", name_, "': plan disagrees with config");
      tt_.emplace(std::move(plan), name_);
      if (cfg_.use_cache) {
        const index_t cap = cfg_.cache_capacity > 0
                                ? cfg_.cache_capacity
                                : LfuCache<T>::default_capacity(cfg_.num_rows);
        cache_.emplace(cap, emb_dim);
      }
    } else {
      require_arg(!cfg_.use_cache, "table '", name_, "': cache requires a TT table");
      dense_.assign(static_cast<size_t>(cfg_.num_rows) * emb_dim, T(0));
    }
  }

  const std::string& name() const { return name_; }
  bool is_tt() const { return tt_.has_value(); }
  TtTable<T>* tt() { return tt_ ? &*tt_ : nullptr; }
  LfuCache<T>* cache() { return cache_ ? &*cache_ : nullptr; }
  const LfuCache<T>* cache() const { return cache_ ? &*cache_ : nullptr; }
  index_t num_rows() const { return cfg_.num_rows; }

  void init(const InitSpec& tt_init, std::uint64_t seed) {
    if (tt_) {
      init_tt_cores(*tt_, tt_init, seed);
    } else {
      // same scale a KL-matched uniform baseline uses
      Rng rng(seed);
      const double s = 1.0 / std::sqrt(static_cast<double>(emb_dim_));
      for (T& v : dense_) v = static_cast<T>(rng.uniform(-s, s));
    }
  }

  index_t parameter_count() const {
    return tt_ ? tt_->plan().parameter_count() : cfg_.num_rows * emb_dim_;
  }

  /// Pooled embeddings for the batch into out (num_bags x emb_dim).
  void forward(const IndexBatch& batch, std::vector<T>& out, index_t micro_batch, bool save) {
    const index_t bags = batch.num_bags();
    out.assign(static_cast<size_t>(bags) * emb_dim_, T(0));
    if (!tt_) {
      batch.validate(cfg_.num_rows, name_);
      dense_forward(batch, out);
      return;
    }
    if (!cache_) {
      auto res = forward_bags(*tt_, batch, micro_batch, save);
      out = std::move(res.output);
      ctx_ = std::move(res.context);
      part_.reset();
      return;
    }
    batch.validate(cfg_.num_rows, name_);
    part_ = cache_->record_and_partition(batch);
    cached_out_.assign(static_cast<size_t>(bags) * emb_dim_, T(0));
    for (index_t b = 0; b < bags; ++b) {
      T* dst = cached_out_.data() + b * emb_dim_;
      for (index_t t = part_->cached.offsets[b]; t < part_->cached.offsets[b + 1]; ++t) {
        const auto row = cache_->row_values(part_->cached.indices[t]);
        axpy(static_cast<T>(part_->cached.weight(t)), row.data(), dst, emb_dim_);
      }
    }
    auto res = forward_bags(*tt_, part_->tt, micro_batch, save);
    tt_out_ = std::move(res.output);
    ctx_ = std::move(res.context);
    combine_partition_outputs<T>(*part_, cached_out_, tt_out_, out, emb_dim_);
  }

  /// Accumulates gradients for the batch forwarded last; grad is
  /// (num_bags x emb_dim) w.r.t. this layer's pooled output.
  void backward(const IndexBatch& batch, std::span<const T> grad) {
    const index_t bags = batch.num_bags();
    require_arg(static_cast<index_t>(grad.size()) == bags * emb_dim_,
                "table '", name_, "': bad gradient size");
    if (!tt_) {
      dense_backward(batch, grad);
      return;
    }
    if (!part_) {
      tt_grads_ = backward_bags(*tt_, batch, ctx_, grad);
      return;
    }
    // Both partition parts are Sum-pooled; a Mean batch needs the original
    // bag size folded into the upstream gradient once, for both parts.
    grad_eff_.assign(grad.begin(), grad.end());
    if (part_->original_pooling == Pooling::Mean) {
      for (index_t b = 0; b < bags; ++b) {
        const index_t sz = part_->original_bag_size(b);
        if (sz > 1) {
          const T inv = static_cast<T>(1.0 / static_cast<double>(sz));
          T* row = grad_eff_.data() + b * emb_dim_;
          for (index_t j = 0; j < emb_dim_; ++j) row[j] *= inv;
        }
      }
    }
    tt_grads_ = backward_bags(*tt_, part_->tt, ctx_,
                              std::span<const T>(grad_eff_.data(), grad_eff_.size()));
    slot_grads_.emplace(emb_dim_, cache_->capacity());
    for (index_t b = 0; b < bags; ++b) {
      const T* grow = grad_eff_.data() + b * emb_dim_;
      for (index_t t = part_->cached.offsets[b]; t < part_->cached.offsets[b + 1]; ++t) {
        T* dst = slot_grads_->row_for(part_->cached.indices[t]);
        axpy(static_cast<T>(part_->cached.weight(t)), grow, dst, emb_dim_);
      }
    }
  }

  void step(double lr) {
    if (tt_) {
      if (tt_grads_) {
        sgd_step(*tt_, *tt_grads_, lr);
        tt_grads_.reset();
      }
      if (slot_grads_) {
        cache_->cached_sgd_update(*slot_grads_, lr);
        slot_grads_.reset();
      }
    } else if (!row_grads_.empty()) {
      const T s = static_cast<T>(lr);
      for (std::size_t i = 0; i < row_grads_.rows().size(); ++i) {
        T* dst = dense_.data() + row_grads_.rows()[i] * emb_dim_;
        const T* src = row_grads_.row(i);
        for (index_t j = 0; j < emb_dim_; ++j) dst[j] -= s * src[j];
      }
      row_grads_.clear();
    }
  }

  void finalize_warmup() {
    if (cache_ && cache_->state() == CacheState::WarmUp) cache_->warmup_finalize(*tt_);
  }
  double refresh_cache() {
    return (cache_ && cache_->state() == CacheState::Active) ? cache_->refresh(*tt_) : 0.0;
  }

  void put(Checkpoint& cp) const {
    if (tt_) {
      cp.put_table(*tt_);
    } else {
      cp.put_array<T>(name_, {cfg_.num_rows, emb_dim_}, dense_);
    }
  }
  void load_from(const Checkpoint& cp) {
    if (tt_) {
      *tt_ = cp.get_table<T>(name_);
    } else {
      auto w = cp.get_array<T>(name_);
      require(w.size() == dense_.size(), "checkpoint table '", name_, "' size mismatch");
      dense_ = std::move(w);
    }
  }

 private:
  void dense_forward(const IndexBatch& batch, std::vector<T>& out) const {
    for (index_t b = 0; b < batch.num_bags(); ++b) {
      T* dst = out.data() + b * emb_dim_;
      for (index_t t = batch.offsets[b]; t < batch.offsets[b + 1]; ++t)
        axpy(static_cast<T>(batch.weight(t)), dense_.data() + batch.indices[t] * emb_dim_, dst,
             emb_dim_);
      const index_t sz = batch.bag_size(b);
      if (batch.pooling == Pooling::Mean && sz > 1) {
        const T inv = static_cast<T>(1.0 / static_cast<double>(sz));
        for (index_t j = 0; j < emb_dim_; ++j) dst[j] *= inv;
      }
    }
  }

  void dense_backward(const IndexBatch& batch, std::span<const T> grad) {
    for (index_t b = 0; b < batch.num_bags(); ++b) {
      const T* grow = grad.data() + b * emb_dim_;
      const index_t sz = batch.bag_size(b);
      const double scale = (batch.pooling == Pooling::Mean && sz > 0)
                               ? 1.0 / static_cast<double>(sz)
                               : 1.0;
      for (index_t t = batch.offsets[b]; t < batch.offsets[b + 1]; ++t)
        axpy(static_cast<T>(batch.weight(t) * scale), grow,
             row_grads_.row_for(batch.indices[t]), emb_dim_);
    }
  }

  TableConfig cfg_;
  index_t emb_dim_;
  std::string name_;
  std::optional<TtTable<T>> tt_;
  std::vector<T> dense_;
  std::optional<LfuCache<T>> cache_;

  std::optional<CachePartition> part_;
  ForwardContext<T> ctx_;
  std::vector<T> tt_out_, cached_out_, grad_eff_;
  std::optional<CoreGradients<T>> tt_grads_;
  std::optional<SlotGradients<T>> slot_grads_;
  RowGradients<T> row_grads_;
};

/// Small DLRM-style model: bottom MLP on dense features, a set of embedding
/// tables, feature interaction, top MLP ending in one logit.
template <Scalar T>
class DlrmModel {
 public:
  explicit DlrmModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    require_arg(!cfg_.tables.empty(), "need at least one embedding table");
    require_arg(!cfg_.bottom_layers.empty() && cfg_.bottom_layers.back() == cfg_.emb_dim,
                "bottom MLP must end at emb_dim");
    require_arg(!cfg_.top_layers.empty() && cfg_.top_layers.back() == 1,
                "top MLP must end in a single logit");
    bottom_ = Mlp<T>(cfg_.dense_features, cfg_.bottom_layers);
    top_ = Mlp<T>(interaction_dim(), cfg_.top_layers);
    for (size_t t = 0; t < cfg_.tables.size(); ++t)
      tables_.emplace_back(cfg_.tables[t], cfg_.emb_dim, concat("table", t));
  }

  index_t num_features() const { return static_cast<index_t>(cfg_.tables.size()) + 1; }

  index_t interaction_dim() const {
    const index_t f = num_features();
    return cfg_.interaction == InteractionKind::Dot ? cfg_.emb_dim + f * (f - 1) / 2
                                                    : f * cfg_.emb_dim;
  }

  void init(std::uint64_t seed, const InitSpec& tt_init) {
    bottom_.init(mix64(seed ^ 0xB0770ull));
    top_.init(mix64(seed ^ 0x70F00ull));
    for (size_t t = 0; t < tables_.size(); ++t)
      tables_[t].init(tt_init, mix64(seed + 0x7AB1E0ull + t));
  }

  /// Per-sample logits; stashes everything backward() needs.
  std::span<const T> forward(const MiniBatch& mb, index_t micro_batch = kDefaultMicroBatch,
                             bool save = true) {
    const index_t bs = mb.batch_size;
    require_arg(static_cast<index_t>(mb.tables.size()) == num_features() - 1,
                "batch has ", mb.tables.size(), " table batches, model expects ",
                num_features() - 1);
    require_arg(static_cast<index_t>(mb.dense.size()) == bs * cfg_.dense_features,
                "bad dense feature block");
    batch_ = bs;

    dense_in_.resize(mb.dense.size());
    for (size_t i = 0; i < mb.dense.size(); ++i) dense_in_[i] = static_cast<T>(mb.dense[i]);
    auto bout = bottom_.forward(dense_in_, bs);

    features_.resize(num_features());
    features_[0].assign(bout.begin(), bout.end());
    for (size_t t = 0; t < tables_.size(); ++t) {
      require_arg(mb.tables[t].num_bags() == bs, "table ", t, " batch has ",
                  mb.tables[t].num_bags(), " bags, expected ", bs);
      tables_[t].forward(mb.tables[t], features_[t + 1], micro_batch, save);
    }

    const index_t f = num_features();
    const index_t zdim = interaction_dim();
    const index_t ne = cfg_.emb_dim;
    z_.resize(static_cast<size_t>(bs) * zdim);
    if (cfg_.interaction == InteractionKind::Dot) {
      for (index_t r = 0; r < bs; ++r) {
        T* zrow = z_.data() + r * zdim;
        const T* f0 = features_[0].data() + r * ne;
        std::copy(f0, f0 + ne, zrow);
        index_t p = ne;
        for (index_t i = 0; i < f; ++i) {
          const T* fi = features_[i].data() + r * ne;
          for (index_t j = i + 1; j < f; ++j) {
            const T* fj = features_[j].data() + r * ne;
            T dot = T(0);
            for (index_t e = 0; e < ne; ++e) dot += fi[e] * fj[e];
            zrow[p++] = dot;
          }
        }
      }
    } else {
      for (index_t r = 0; r < bs; ++r) {
        T* zrow = z_.data() + r * zdim;
        for (index_t i = 0; i < f; ++i) {
          const T* fi = features_[i].data() + r * ne;
          std::copy(fi, fi + ne, zrow + i * ne);
        }
      }
    }
    return top_.forward(z_, bs);
  }

  void backward(const MiniBatch& mb, std::span<const T> dlogits) {
    const index_t bs = batch_;
    const index_t f = num_features();
    const index_t ne = cfg_.emb_dim;
    auto dz = top_.backward(dlogits);

    dfeat_.resize(f);
    for (index_t i = 0; i < f; ++i)
      dfeat_[i].assign(static_cast<size_t>(bs) * ne, T(0));

    const index_t zdim = interaction_dim();
    if (cfg_.interaction == InteractionKind::Dot) {
      for (index_t r = 0; r < bs; ++r) {
        const T* dzrow = dz.data() + r * zdim;
        axpy(T(1), dzrow, dfeat_[0].data() + r * ne, ne);
        index_t p = ne;
        for (index_t i = 0; i < f; ++i) {
          const T* fi = features_[i].data() + r * ne;
          for (index_t j = i + 1; j < f; ++j) {
            const T* fj = features_[j].data() + r * ne;
            const T dd = dzrow[p++];
            axpy(dd, fj, dfeat_[i].data() + r * ne, ne);
            axpy(dd, fi, dfeat_[j].data() + r * ne, ne);
          }
        }
      }
    } else {
      for (index_t r = 0; r < bs; ++r) {
        const T* dzrow = dz.data() + r * zdim;
        for (index_t i = 0; i < f; ++i)
          axpy(T(1), dzrow + i * ne, dfeat_[i].data() + r * ne, ne);
      }
    }

    bottom_.backward(dfeat_[0]);
    for (size_t t = 0; t < tables_.size(); ++t)
      tables_[t].backward(mb.tables[t], dfeat_[t + 1]);
  }

  void step(double lr) {
    bottom_.step(lr);
    top_.step(lr);
    bottom_.zero_grad();
    top_.zero_grad();
    for (auto& t : tables_) t.step(lr);
  }

  void finalize_warmups() {
    for (auto& t : tables_) t.finalize_warmup();
  }
  void refresh_caches() {
    for (auto& t : tables_) {
      const double drift = t.refresh_cache();
      if (t.cache()) log_debug(concat(t.name(), " hot-set drift ", drift));
    }
  }

  double hit_rate() const {
    std::uint64_t hits = 0, accesses = 0;
    for (const auto& t : tables_) {
      if (const auto* c = t.cache()) {
        hits += c->active_hits();
        accesses += c->active_accesses();
      }
    }
    return accesses == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(accesses);
  }

  index_t parameter_count() const {
    index_t n = bottom_.parameter_count() + top_.parameter_count();
    for (const auto& t : tables_) n += t.parameter_count();
    return n;
  }

  std::vector<EmbeddingLayer<T>>& tables() { return tables_; }
  Mlp<T>& bottom() { return bottom_; }
  Mlp<T>& top() { return top_; }
  const ModelConfig& config() const { return cfg_; }

  void save_checkpoint(Checkpoint& cp) const {
    for (const auto& t : tables_) t.put(cp);
    bottom_.put(cp, "bottom");
    top_.put(cp, "top");
  }
  void load_checkpoint(const Checkpoint& cp) {
    for (auto& t : tables_) t.load_from(cp);
    bottom_.load_from(cp, "bottom");
    top_.load_from(cp, "top");
  }

 private:
  ModelConfig cfg_;
  Mlp<T> bottom_, top_;
  std::vector<EmbeddingLayer<T>> tables_;

  index_t batch_ = 0;
  std::vector<T> dense_in_, z_;
  std::vector<std::vector<T>> features_, dfeat_;
};

/// Full training run: init, cache stage transitions, per-iteration metrics,
/// divergence guard, final held-out evaluation.
template <Scalar T>
Metrics train(DlrmModel<T>& model, const TrainConfig& tc, DataSource& source) {
  require_arg(source.dense_features() == model.config().dense_features,
              "data source dense_features mismatch");
  require_arg(source.num_tables() == model.num_features() - 1, "data source table count mismatch");
  require_arg(tc.iterations >= 1, "need at least one iteration");
  require_arg(tc.metrics_every >= 1, "metrics_every must be positive");

  model.init(tc.seed, tc.tt_init);
  Metrics metrics;
  metrics.total_params = model.parameter_count();
  const index_t warmup_iters =
      static_cast<index_t>(static_cast<double>(tc.iterations) * tc.warmup_fraction);

  std::vector<T> dlogits;
  for (index_t iter = 0; iter < tc.iterations; ++iter) {
    if (iter == warmup_iters) {
      model.finalize_warmups();
      log_info(concat("cache warm-up finished at iteration ", iter));
    } else if (iter > warmup_iters && tc.refresh_period > 0 &&
               (iter - warmup_iters) % tc.refresh_period == 0) {
      model.refresh_caches();
    }

    const auto t0 = std::chrono::steady_clock::now();
    MiniBatch mb = source.next(iter);
    auto logits = model.forward(mb, tc.micro_batch, tc.save_intermediates);
    const double loss = bce_with_logits(logits, mb.labels, &dlogits);
    const double acc = binary_accuracy(logits, mb.labels);
    model.backward(mb, dlogits);
    model.step(tc.lr);
    const double ms =
        tc.collect_timing
            ? std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                  .count()
            : 0.0;

    require(std::isfinite(loss) && loss < tc.divergence_limit, "training diverged at iteration ",
            iter, ": loss=", loss);
    if (iter % tc.metrics_every == 0 || iter + 1 == tc.iterations)
      metrics.rows.push_back({iter, loss, acc, model.hit_rate(), ms});
  }

  // held-out evaluation on fresh stream positions
  double eloss = 0, eacc = 0;
  for (index_t j = 0; j < tc.eval_batches; ++j) {
    MiniBatch mb = source.next(tc.iterations + j);
    auto logits = model.forward(mb, tc.micro_batch, false);
    eloss += bce_with_logits<T>(logits, mb.labels);
    eacc += binary_accuracy(logits, mb.labels);
  }
  if (tc.eval_batches > 0) {
    metrics.final_loss = eloss / static_cast<double>(tc.eval_batches);
    metrics.final_accuracy = eacc / static_cast<double>(tc.eval_batches);
  }
  return metrics;
}

}  // namespace ttrec

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <vector>

#include "ttrec/data.hpp"
#include "ttrec/embedding_ops.hpp"
#include "ttrec/initializer.hpp"

namespace ttrec {

/// Median of per-group means; robust against scheduler spikes on shared
/// hosts. Also reports the standard deviation of the group means.
struct MomStat {
  double value = 0;
  double spread = 0;
};

inline MomStat median_of_means(std::vector<double> samples, int groups = 5) {
  if (samples.empty()) return {};
  groups = std::max(1, std::min<int>(groups, static_cast<int>(samples.size())));
  const size_t per = samples.size() / groups;
  std::vector<double> means;
  for (int g = 0; g < groups; ++g) {
    const size_t lo = g * per;
    const size_t hi = (g + 1 == groups) ? samples.size() : lo + per;
    double m = 0;
    for (size_t i = lo; i < hi; ++i) m += samples[i];
    means.push_back(m / static_cast<double>(hi - lo));
  }
  std::sort(means.begin(), means.end());
  MomStat s;
  s.value = means[means.size() / 2];
  if (means.size() % 2 == 0) s.value = 0.5 * (s.value + means[means.size() / 2 - 1]);
  double mean = 0;
  for (double m : means) mean += m;
  mean /= static_cast<double>(means.size());
  double var = 0;
  for (double m : means) var += (m - mean) * (m - mean);
  s.spread = std::sqrt(var / static_cast<double>(means.size()));
  return s;
}

struct BenchRow {
  index_t pooling = 0;
  index_t rank = 0;
  double fwd_us_per_sample = 0, bwd_us_per_sample = 0;
  double fwd_us_per_lookup = 0, bwd_us_per_lookup = 0;
  double serial_fwd_us_per_lookup = 0, serial_bwd_us_per_lookup = 0;
  double fwd_spread_us = 0, bwd_spread_us = 0;  // per-lookup, group-mean sd
};

struct BenchConfig {
  index_t rows = 100000;
  index_t emb_dim = 16;
  int tt_dim = 3;
  std::vector<index_t> ranks = {8, 16, 32, 64};
  std::vector<index_t> poolings = {1, 10, 100};
  index_t bags = 256;
  index_t reps = 30;
  index_t micro_batch = kDefaultMicroBatch;
  std::uint64_t seed = 0;
  bool include_serial = true;
  index_t target_lookups_per_rep = 8192;  // inner-repeat floor for tiny configs
};

/// Embedding-bag timing sweep over pooling factors and ranks, batched
/// kernels vs. the serial reference. One row per (pooling, rank).
template <Scalar T>
std::vector<BenchRow> bench_pooling(const BenchConfig& cfg) {
  using clock = std::chrono::steady_clock;
  require_arg(cfg.reps >= 1, "reps must be positive");
  require_arg(cfg.bags >= 1, "bags must be positive");
  std::vector<BenchRow> out;

  for (index_t rank : cfg.ranks) {
    TtTable<T> table(plan_shapes(cfg.rows, cfg.emb_dim, cfg.tt_dim, rank),
                     concat("bench-r", rank));
    init_tt_cores(table, InitSpec::sampled_gaussian(), cfg.seed);

    for (index_t pooling : cfg.poolings) {
      Rng rng = Rng::derive(cfg.seed, (static_cast<std::uint64_t>(rank) << 20) ^
                                          static_cast<std::uint64_t>(pooling));
      IndexBatch batch;
      batch.pooling = Pooling::Sum;
      batch.offsets.reserve(cfg.bags + 1);
      for (index_t b = 0; b < cfg.bags; ++b) {
        for (index_t p = 0; p < pooling; ++p)
          batch.indices.push_back(rng.uniform_int(0, cfg.rows));
        batch.offsets.push_back(static_cast<index_t>(batch.indices.size()));
      }
      std::vector<T> grad(static_cast<size_t>(cfg.bags) * cfg.emb_dim, T(1));
      const index_t lookups = batch.num_lookups();
      const index_t inner =
          std::max<index_t>(1, cfg.target_lookups_per_rep / std::max<index_t>(lookups, 1));

      // warm-up outside timing
      {
        auto res = forward_bags(table, batch, cfg.micro_batch, true);
        backward_bags(table, batch, res.context, std::span<const T>(grad.data(), grad.size()));
      }

      std::vector<double> fwd_us, bwd_us, sfwd_us, sbwd_us;
      for (index_t rep = 0; rep < cfg.reps; ++rep) {
        auto t0 = clock::now();
        for (index_t i = 0; i < inner; ++i)
          forward_bags(table, batch, cfg.micro_batch, false);
        auto t1 = clock::now();
        fwd_us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count() /
                         static_cast<double>(inner));

        auto ctxres = forward_bags(table, batch, cfg.micro_batch, true);
        auto t2 = clock::now();
        for (index_t i = 0; i < inner; ++i)
          backward_bags(table, batch, ctxres.context,
                        std::span<const T>(grad.data(), grad.size()));
        auto t3 = clock::now();
        bwd_us.push_back(std::chrono::duration<double, std::micro>(t3 - t2).count() /
                         static_cast<double>(inner));

        if (cfg.include_serial) {
          auto t4 = clock::now();
          for (index_t i = 0; i < inner; ++i) ref::forward_bags(table, batch);
          auto t5 = clock::now();
          sfwd_us.push_back(std::chrono::duration<double, std::micro>(t5 - t4).count() /
                            static_cast<double>(inner));
          auto t6 = clock::now();
          for (index_t i = 0; i < inner; ++i)
            ref::backward_bags(table, batch, std::span<const T>(grad.data(), grad.size()));
          auto t7 = clock::now();
          sbwd_us.push_back(std::chrono::duration<double, std::micro>(t7 - t6).count() /
                            static_cast<double>(inner));
        }
      }

      BenchRow row;
      row.pooling = pooling;
      row.rank = rank;
      const auto f = median_of_means(fwd_us);
      const auto b = median_of_means(bwd_us);
      const double dl = static_cast<double>(lookups);
      const double db = static_cast<double>(cfg.bags);
      row.fwd_us_per_sample = f.value / db;
      row.bwd_us_per_sample = b.value / db;
      row.fwd_us_per_lookup = f.value / dl;
      row.bwd_us_per_lookup = b.value / dl;
      row.fwd_spread_us = f.spread / dl;
      row.bwd_spread_us = b.spread / dl;
      if (cfg.include_serial) {
        row.serial_fwd_us_per_lookup = median_of_means(sfwd_us).value / dl;
        row.serial_bwd_us_per_lookup = median_of_means(sbwd_us).value / dl;
      }
      out.push_back(row);
    }
  }
  return out;
}

}  // namespace ttrec

#include "ttrec/data.hpp"

#include <algorithm>
#include <cmath>

namespace ttrec {

ZipfianSampler::ZipfianSampler(index_t population, double exponent) : exponent_(exponent) {
  require_arg(population >= 1, "population must be positive, got ", population);
  require_arg(exponent >= 0, "exponent must be non-negative, got ", exponent);
  cdf_.resize(population);
  double acc = 0.0;
  for (index_t r = 0; r < population; ++r) {
    acc += std::pow(static_cast<double>(r + 1), -exponent);
    cdf_[r] = acc;
  }
  const double inv = 1.0 / acc;
  for (double& c : cdf_) c *= inv;
  cdf_.back() = 1.0;
}

double ZipfianSampler::prob(index_t rank) const {
  require_arg(rank >= 0 && rank < population(), "rank ", rank, " out of range");
  return rank == 0 ? cdf_[0] : cdf_[rank] - cdf_[rank - 1];
}

index_t ZipfianSampler::sample(Rng& rng) const {
  const double u = rng.uniform();
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  if (it == cdf_.end()) --it;
  return static_cast<index_t>(it - cdf_.begin());
}

IndexBatch generate_zipfian_batch(const ZipfianSampler& sampler, Rng& rng, index_t num_bags,
                                  index_t pooling_factor, Pooling pooling) {
  require_arg(num_bags >= 0, "num_bags must be non-negative");
  require_arg(pooling_factor >= 1, "pooling_factor must be >= 1, got ", pooling_factor);
  IndexBatch batch;
  batch.pooling = pooling;
  batch.indices.reserve(static_cast<size_t>(num_bags) * pooling_factor);
  batch.offsets.reserve(num_bags + 1);
  for (index_t b = 0; b < num_bags; ++b) {
    for (index_t p = 0; p < pooling_factor; ++p) batch.indices.push_back(sampler.sample(rng));
    batch.offsets.push_back(static_cast<index_t>(batch.indices.size()));
  }
  return batch;
}

SyntheticDataSource::SyntheticDataSource(SyntheticConfig config, std::uint64_t seed)
    : config_(std::move(config)), seed_(seed) {
  require_arg(!config_.table_rows.empty(), "need at least one table");
  require_arg(config_.dense_features >= 1, "need at least one dense feature");
  require_arg(config_.batch_size >= 1, "batch_size must be positive");

  // teacher weights and per-row scores, one derived stream per piece
  Rng wrng = Rng::derive(seed_, 0xDE5Eull);
  const double wscale = 1.0 / std::sqrt(static_cast<double>(config_.dense_features));
  dense_w_.resize(config_.dense_features);
  for (double& w : dense_w_) w = wscale * wrng.normal();

  scores_.resize(config_.table_rows.size());
  for (size_t t = 0; t < config_.table_rows.size(); ++t) {
    Rng srng = Rng::derive(seed_, 0x5C0ull + t);
    scores_[t].resize(config_.table_rows[t]);
    for (double& s : scores_[t]) s = srng.normal();
    samplers_.emplace_back(config_.table_rows[t], config_.zipf_exponent);
  }
}

double SyntheticDataSource::teacher_logit(
    const std::vector<double>& dense, const std::vector<std::vector<index_t>>& bags) const {
  double logit = 0.0;
  for (index_t f = 0; f < config_.dense_features; ++f) logit += dense_w_[f] * dense[f];
  const double beta = config_.categorical_weight / static_cast<double>(scores_.size());
  for (size_t t = 0; t < bags.size(); ++t) {
    if (bags[t].empty()) continue;
    double s = 0.0;
    for (index_t row : bags[t]) s += scores_[t][row];
    logit += beta * s / static_cast<double>(bags[t].size());
  }
  return logit;
}

MiniBatch SyntheticDataSource::next(index_t iteration) {
  Rng rng = Rng::derive(seed_, 0xBA7C4ull + static_cast<std::uint64_t>(iteration));
  const index_t bs = config_.batch_size;
  const index_t df = config_.dense_features;
  const index_t nt = num_tables();

  MiniBatch mb;
  mb.batch_size = bs;
  mb.dense.resize(static_cast<size_t>(bs) * df);
  mb.labels.resize(bs);
  mb.tables.assign(nt, IndexBatch{});
  for (auto& tb : mb.tables) {
    tb.pooling = config_.pooling;
    tb.offsets.reserve(bs + 1);
  }

  std::vector<double> dense(df);
  std::vector<std::vector<index_t>> bags(nt);
  for (index_t i = 0; i < bs; ++i) {
    double logit = 0.0;
    for (int attempt = 0; attempt < config_.max_redraws; ++attempt) {
      for (double& v : dense) v = rng.normal();
      for (index_t t = 0; t < nt; ++t) {
        bags[t].resize(config_.pooling_factor);
        for (index_t p = 0; p < config_.pooling_factor; ++p)
          bags[t][p] = samplers_[t].sample(rng);
      }
      logit = teacher_logit(dense, bags);
      if (std::abs(logit) >= config_.margin) break;
    }
    std::copy(dense.begin(), dense.end(), mb.dense.begin() + i * df);
    mb.labels[i] = logit > 0 ? 1.0 : 0.0;
    for (index_t t = 0; t < nt; ++t) {
      auto& tb = mb.tables[t];
      tb.indices.insert(tb.indices.end(), bags[t].begin(), bags[t].end());
      tb.offsets.push_back(static_cast<index_t>(tb.indices.size()));
    }
  }
  return mb;
}

}  // namespace ttrec

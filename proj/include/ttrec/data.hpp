#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ttrec/index_batch.hpp"
#include "ttrec/rng.hpp"

namespace ttrec {

/// Zipf(s) sampler over ranks 0..population-1: P(r) proportional to
/// 1/(r+1)^s. s = 0 degenerates to the uniform distribution. Sampling is
/// CDF inversion by binary search.
class ZipfianSampler {
 public:
  ZipfianSampler(index_t population, double exponent);

  index_t population() const { return static_cast<index_t>(cdf_.size()); }
  double exponent() const { return exponent_; }
  double prob(index_t rank) const;
  index_t sample(Rng& rng) const;

 private:
  double exponent_;
  std::vector<double> cdf_;
};

/// One ragged batch of bags drawn i.i.d. from the sampler.
IndexBatch generate_zipfian_batch(const ZipfianSampler& sampler, Rng& rng, index_t num_bags,
                                  index_t pooling_factor, Pooling pooling = Pooling::Sum);

/// One training mini-batch for the recommendation harness.
struct MiniBatch {
  index_t batch_size = 0;
  std::vector<double> dense;        // batch_size x dense_features
  std::vector<IndexBatch> tables;   // one bag per sample, per table
  std::vector<double> labels;       // batch_size, in {0, 1}
};

class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual MiniBatch next(index_t iteration) = 0;
  virtual index_t dense_features() const = 0;
  virtual index_t num_tables() const = 0;
};

/// Synthetic click stream with a planted linear teacher: the label is the
/// sign of w . dense + beta * mean of per-row scores across tables, so a
/// model only separates it by actually learning per-row embedding signal.
/// Samples with |logit| < margin are redrawn to keep classes separable.
struct SyntheticConfig {
  index_t dense_features = 3;
  std::vector<index_t> table_rows;
  double zipf_exponent = 1.05;
  index_t batch_size = 128;
  index_t pooling_factor = 1;
  Pooling pooling = Pooling::Sum;
  double margin = 0.25;
  double categorical_weight = 1.0;  // beta
  int max_redraws = 100;
};

class SyntheticDataSource : public DataSource {
 public:
  SyntheticDataSource(SyntheticConfig config, std::uint64_t seed);

  MiniBatch next(index_t iteration) override;
  index_t dense_features() const override { return config_.dense_features; }
  index_t num_tables() const override {
    return static_cast<index_t>(config_.table_rows.size());
  }

  /// Teacher logit for one sample (used by tests).
  double teacher_logit(const std::vector<double>& dense,
                       const std::vector<std::vector<index_t>>& bags) const;
  const std::vector<double>& row_scores(index_t table) const { return scores_[table]; }

 private:
  SyntheticConfig config_;
  std::uint64_t seed_;
  std::vector<double> dense_w_;
  std::vector<std::vector<double>> scores_;  // per table, per row
  std::vector<ZipfianSampler> samplers_;
};

inline constexpr index_t kCriteoDense = 13;
inline constexpr index_t kCriteoCat = 26;

/// Streaming reader for Criteo click-log TSV/CSV lines
/// (label, 13 integer features, 26 hashed categorical tokens).
/// Dense features become log(1 + max(v, 0)); empty fields become 0.
/// Categorical tokens hash into [1, table_size), with 0 reserved for
/// missing values. Lines with unparsable numbers are skipped and counted;
/// a line with the wrong field count aborts with its line number.
class CriteoReader {
 public:
  struct Record {
    double label = 0;
    std::vector<double> dense;
    std::vector<index_t> cats;
  };

  CriteoReader(const std::string& path, std::vector<index_t> table_sizes);
  ~CriteoReader();

  bool next(Record& out);
  std::uint64_t rows_read() const { return rows_read_; }
  std::uint64_t rows_skipped() const { return rows_skipped_; }

 private:
  std::vector<index_t> table_sizes_;
  void* file_;  // FILE*
  std::string path_;
  std::uint64_t line_ = 0;
  std::uint64_t rows_read_ = 0;
  std::uint64_t rows_skipped_ = 0;
};

/// In-memory DataSource over a Criteo file; batches cycle over the rows.
class CriteoDataSource : public DataSource {
 public:
  CriteoDataSource(const std::string& path, std::vector<index_t> table_sizes,
                   index_t batch_size);

  MiniBatch next(index_t iteration) override;
  index_t dense_features() const override { return kCriteoDense; }
  index_t num_tables() const override { return kCriteoCat; }
  index_t num_records() const { return static_cast<index_t>(labels_.size()); }
  std::uint64_t rows_skipped() const { return rows_skipped_; }

 private:
  index_t batch_size_;
  std::vector<double> dense_;    // records x kCriteoDense
  std::vector<index_t> cats_;    // records x kCriteoCat
  std::vector<double> labels_;
  std::uint64_t rows_skipped_ = 0;
};

}  // namespace ttrec

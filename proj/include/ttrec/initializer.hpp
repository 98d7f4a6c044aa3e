#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "ttrec/rng.hpp"
#include "ttrec/tt_table.hpp"

namespace ttrec {

enum class InitKind { Uniform, Gaussian, SampledGaussian };

/// How sampled-Gaussian core entries are scaled toward the target product
/// moment. target_sigma2 = v, tt_dim = d:
///   InverseRoot   entry *= v^(-1/(2d));  audit mode, inflates variance
///   Root          entry *= v^(+1/(2d));  right direction, ignores that
///                 tail draws have second moment s_t^2 > 1
///   MomentMatched entry *= v^(+1/(2d)) / s_t;  product of d entries has
///                 second moment exactly v (the default)
enum class ScalingMode { InverseRoot, Root, MomentMatched };

inline constexpr int kMaxRedraws = 10000;

struct InitSpec {
  InitKind kind = InitKind::SampledGaussian;
  double a = 0.0, b = 0.0;     // Uniform bounds
  double mu = 0.0;             // Gaussian mean
  double sigma2 = 1.0;         // Gaussian variance
  double threshold = 2.0;      // Sampled: keep draws with |x| > threshold
  double target_sigma2 = 0.0;  // Sampled: product second moment; 0 = 1/(3*emb_dim)
  ScalingMode scaling = ScalingMode::MomentMatched;
  bool one_sided = false;      // audit: keep x > threshold (upper tail only)

  static InitSpec uniform(double a, double b) {
    InitSpec s;
    s.kind = InitKind::Uniform;
    s.a = a;
    s.b = b;
    return s;
  }
  static InitSpec gaussian(double mu, double sigma2) {
    InitSpec s;
    s.kind = InitKind::Gaussian;
    s.mu = mu;
    s.sigma2 = sigma2;
    return s;
  }
  static InitSpec sampled_gaussian(double threshold = 2.0, double target_sigma2 = 0.0,
                                   ScalingMode scaling = ScalingMode::MomentMatched,
                                   bool one_sided = false) {
    InitSpec s;
    s.kind = InitKind::SampledGaussian;
    s.threshold = threshold;
    s.target_sigma2 = target_sigma2;
    s.scaling = scaling;
    s.one_sided = one_sided;
    return s;
  }

  void validate() const {
    switch (kind) {
      case InitKind::Uniform:
        require_arg(a < b, "uniform init needs a < b, got [", a, ", ", b, "]");
        break;
      case InitKind::Gaussian:
        require_arg(sigma2 > 0, "gaussian init needs sigma2 > 0, got ", sigma2);
        break;
      case InitKind::SampledGaussian:
        require_arg(threshold > 0, "sampled init needs threshold > 0, got ", threshold);
        require_arg(target_sigma2 >= 0, "target_sigma2 must be >= 0, got ", target_sigma2);
        break;
    }
  }
};

/// The Gaussian closest in KL divergence to Uniform(a, b): moment matching
/// gives mu = (a+b)/2, sigma^2 = (b-a)^2 / 12.
inline std::pair<double, double> kl_optimal_gaussian(double a, double b) {
  require_arg(a < b, "kl_optimal_gaussian needs a < b, got [", a, ", ", b, "]");
  const double mu = (a + b) / 2.0;
  const double sigma2 = (b - a) * (b - a) / 12.0;
  return {mu, sigma2};
}

/// E[X^2] of a standard normal conditioned on |X| > t (same value for the
/// one-sided tail X > t): 1 + t*phi(t)/Q(t) with Q(t) = erfc(t/sqrt(2))/2.
inline double truncated_normal_second_moment(double t) {
  require_arg(t > 0, "threshold must be positive, got ", t);
  const double phi = std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI);
  const double q = 0.5 * std::erfc(t / std::sqrt(2.0));
  return 1.0 + t * phi / q;
}

/// Product-entry second moment the sampled init aims for; the 0 sentinel
/// resolves to 1/(3*emb_dim), i.e. the variance of Uniform(-1/sqrt(n), 1/sqrt(n)).
inline double resolved_target_sigma2(const InitSpec& spec, index_t emb_dim) {
  if (spec.target_sigma2 > 0) return spec.target_sigma2;
  require_arg(emb_dim >= 1, "emb_dim needed to derive the default target variance");
  return 1.0 / (3.0 * static_cast<double>(emb_dim));
}

/// Multiplier applied to every accepted tail draw.
inline double sampled_entry_scale(const InitSpec& spec, int tt_dim, index_t emb_dim) {
  const double v = resolved_target_sigma2(spec, emb_dim);
  const double root = std::pow(v, 1.0 / (2.0 * tt_dim));
  switch (spec.scaling) {
    case ScalingMode::InverseRoot:
      return 1.0 / root;
    case ScalingMode::Root:
      return root;
    case ScalingMode::MomentMatched:
      return root / std::sqrt(truncated_normal_second_moment(spec.threshold));
  }
  return root;
}

/// One core entry as init_tt_cores would produce it.
inline double draw_entry(const InitSpec& spec, int tt_dim, index_t emb_dim, Rng& rng) {
  switch (spec.kind) {
    case InitKind::Uniform:
      return rng.uniform(spec.a, spec.b);
    case InitKind::Gaussian:
      return spec.mu + std::sqrt(spec.sigma2) * rng.normal();
    case InitKind::SampledGaussian: {
      const double scale = sampled_entry_scale(spec, tt_dim, emb_dim);
      for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
        const double x = rng.normal();
        const bool keep = spec.one_sided ? (x > spec.threshold) : (std::abs(x) > spec.threshold);
        if (keep) return x * scale;
      }
      fail("sampled init: no accepted draw after ", kMaxRedraws,
           " attempts (threshold ", spec.threshold, ")");
    }
  }
  fail("unreachable init kind");
}

/// Fills all cores. Each core uses its own derived RNG stream, so the
/// result is deterministic in (seed) and independent of evaluation order.
template <Scalar T>
void init_tt_cores(TtTable<T>& table, const InitSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int d = table.dim();
  const index_t n = table.cols();
  for (int k = 0; k < d; ++k) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(k));
    auto core = table.core(k);
    for (auto& v : core) v = static_cast<T>(draw_entry(spec, d, n, rng));
  }
  table.mark_mutated();
}

struct Histogram {
  std::vector<double> edges;    // num_bins + 1
  std::vector<std::uint64_t> counts;
  std::vector<double> density;  // counts normalized to integrate to <= 1
  std::uint64_t total = 0;      // all samples, including out-of-range ones
  std::uint64_t in_range = 0;
};

/// Histogram of products of tt_dim independent entry draws; the shape the
/// chained product pushes through each rank path at init time. Without an
/// explicit range the sample min/max is used.
inline Histogram product_distribution_histogram(
    const InitSpec& spec, int tt_dim, index_t emb_dim, std::uint64_t num_samples, int num_bins,
    std::uint64_t seed, std::optional<std::pair<double, double>> range = std::nullopt) {
  spec.validate();
  require_arg(tt_dim >= 1, "tt_dim must be positive, got ", tt_dim);
  require_arg(num_bins >= 1, "num_bins must be positive, got ", num_bins);
  require_arg(num_samples >= 1, "num_samples must be positive, got ", num_samples);

  Rng rng(seed);
  std::vector<double> samples(num_samples);
  for (std::uint64_t s = 0; s < num_samples; ++s) {
    double prod = 1.0;
    for (int k = 0; k < tt_dim; ++k) prod *= draw_entry(spec, tt_dim, emb_dim, rng);
    samples[s] = prod;
  }

  double lo, hi;
  if (range) {
    lo = range->first;
    hi = range->second;
  } else {
    lo = hi = samples[0];
    for (double v : samples) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  require_arg(lo < hi, "histogram range is empty: [", lo, ", ", hi, "]");

  Histogram h;
  h.total = num_samples;
  h.edges.resize(num_bins + 1);
  const double w = (hi - lo) / num_bins;
  for (int b = 0; b <= num_bins; ++b) h.edges[b] = lo + w * b;
  h.counts.assign(num_bins, 0);
  for (double v : samples) {
    if (v < lo || v > hi) continue;
    int b = std::min(static_cast<int>((v - lo) / w), num_bins - 1);
    ++h.counts[b];
    ++h.in_range;
  }
  h.density.resize(num_bins);
  for (int b = 0; b < num_bins; ++b)
    h.density[b] = static_cast<double>(h.counts[b]) / (static_cast<double>(num_samples) * w);
  return h;
}

}  // namespace ttrec

// ttrec: shape planning, training harness, benchmarks and inspection for
// TT-compressed embedding tables.
#include <omp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ttrec/bench.hpp"
#include "ttrec/checkpoint.hpp"
#include "ttrec/data.hpp"
#include "ttrec/embedding_ops.hpp"
#include "ttrec/initializer.hpp"
#include "ttrec/lfu_cache.hpp"
#include "ttrec/log.hpp"
#include "ttrec/model.hpp"
#include "ttrec/shape_plan.hpp"

namespace {

using namespace ttrec;

// Kaggle-scale reference tables used by `plan --table2` golden output.
struct RefTable {
  index_t rows;
  std::vector<index_t> row_factors;
};
const std::vector<RefTable> kRefTables = {
    {10131227, {200, 220, 250}}, {8351593, {200, 200, 209}}, {7046547, {200, 200, 200}},
    {5461306, {166, 175, 188}},  {2202608, {125, 130, 136}}, {286181, {53, 72, 75}},
    {142572, {50, 52, 55}},
};
const std::vector<index_t> kRefColFactors = {2, 2, 4};
constexpr index_t kRefEmbDim = 16;

std::string cores_string(const ShapePlan& p) {
  std::ostringstream os;
  for (int k = 0; k < p.tt_dim; ++k) {
    if (k) os << ",";
    os << "(" << p.ranks[k] << "," << p.row_factors[k] << "," << p.col_factors[k] << ","
       << p.ranks[k + 1] << ")";
  }
  return os.str();
}

std::string join(const std::vector<index_t>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    os << v[i];
  }
  return os.str();
}

std::ostream& open_or_stdout(std::ofstream& file, const std::string& path) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path, std::ios::trunc);
  require(file.good(), "cannot open '", path, "' for writing");
  return file;
}

// ---- plan ----------------------------------------------------------------

struct PlanArgs {
  index_t rows = 0, dim = 0, rank = 8;
  int tt_dim = 3;
  std::vector<index_t> row_factors, col_factors;
  bool table2 = false;
};

void run_plan(const PlanArgs& a) {
  if (a.table2) {
    std::vector<index_t> ranks = a.rank > 0 ? std::vector<index_t>{a.rank}
                                            : std::vector<index_t>{16, 32, 64};
    for (index_t rank : ranks) {
      if (ranks.size() > 1) std::cout << "rank=" << rank << "\n";
      for (const RefTable& ref : kRefTables) {
        ShapePlan plan = plan_shapes(ref.rows, kRefEmbDim, 3, rank, ref.row_factors,
                                     kRefColFactors);
        std::cout << "rows=" << plan.num_rows << " dim=" << plan.emb_dim
                  << " cores=" << cores_string(plan) << " params=" << plan.parameter_count()
                  << " reduction=" << plan.memory_reduction() << "\n";
      }
    }
    return;
  }
  require_arg(a.rows > 0 && a.dim > 0, "plan requires --rows and --dim (or --table2)");
  std::optional<std::vector<index_t>> rf, cf;
  if (!a.row_factors.empty()) rf = a.row_factors;
  if (!a.col_factors.empty()) cf = a.col_factors;
  ShapePlan plan = plan_shapes(a.rows, a.dim, a.tt_dim, a.rank > 0 ? a.rank : 8, rf, cf);
  std::cout << "rows=" << plan.num_rows << " dim=" << plan.emb_dim << " tt_dim=" << plan.tt_dim
            << "\n";
  std::cout << "row_factors=" << join(plan.row_factors) << "\n";
  std::cout << "col_factors=" << join(plan.col_factors) << "\n";
  std::cout << "ranks=" << join(plan.ranks) << "\n";
  std::cout << "cores=" << cores_string(plan) << "\n";
  std::cout << "padded_rows=" << plan.padded_rows() << "\n";
  std::cout << "params=" << plan.parameter_count() << "\n";
  std::cout << "reduction=" << plan.memory_reduction() << "\n";
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::vector<index_t> table_rows = {10000, 20000, 50000, 100000};
  bool no_tt = false;
  index_t rank = 8;
  int tt_dim = 3;
  bool cache = false;
  index_t cache_capacity = 0;
  index_t emb_dim = 16;
  index_t dense_features = 3;
  std::vector<index_t> bottom_mlp, top_mlp = {8, 1};
  std::string interaction = "dot";
  std::string pooling = "sum";
  index_t pooling_factor = 1;
  double zipf_s = 1.05;
  double margin = 0.25;
  index_t iterations = 1000;
  index_t batch_size = 128;
  double lr = 0.05;
  double warmup_frac = 0.1;
  index_t refresh_period = 1000;
  index_t micro_batch = kDefaultMicroBatch;
  bool no_save_intermediates = false;
  std::string init = "sampled";
  double init_a = 0, init_b = 0, init_mu = 0, init_sigma2 = 0;
  double threshold = 2.0, target_sigma2 = 0.0;
  std::string scaling = "moment-matched";
  bool one_sided = false;
  std::string criteo;
  index_t eval_batches = 20;
  index_t metrics_every = 1;
  bool no_timing = false;
  std::string metrics_out, checkpoint_out, dtype = "f32";
  std::uint64_t seed = 0;
};

ScalingMode parse_scaling(const std::string& s) {
  if (s == "moment-matched") return ScalingMode::MomentMatched;
  if (s == "root") return ScalingMode::Root;
  if (s == "inverse-root") return ScalingMode::InverseRoot;
  fail_arg("unknown scaling mode '", s, "' (moment-matched|root|inverse-root)");
}

InitSpec parse_init(const TrainArgs& a) {
  if (a.init == "sampled")
    return InitSpec::sampled_gaussian(a.threshold, a.target_sigma2, parse_scaling(a.scaling),
                                      a.one_sided);
  if (a.init == "uniform") {
    require_arg(a.init_a < a.init_b, "--init uniform needs --init-a < --init-b");
    return InitSpec::uniform(a.init_a, a.init_b);
  }
  if (a.init == "gaussian") {
    require_arg(a.init_sigma2 > 0, "--init gaussian needs --init-sigma2 > 0");
    return InitSpec::gaussian(a.init_mu, a.init_sigma2);
  }
  fail_arg("unknown init '", a.init, "' (sampled|uniform|gaussian)");
}

template <Scalar T>
void run_train_typed(const TrainArgs& a) {
  ModelConfig mc;
  mc.emb_dim = a.emb_dim;
  mc.dense_features = a.criteo.empty() ? a.dense_features : kCriteoDense;
  mc.bottom_layers = a.bottom_mlp.empty() ? std::vector<index_t>{a.emb_dim} : a.bottom_mlp;
  mc.top_layers = a.top_mlp;
  if (a.interaction == "dot") mc.interaction = InteractionKind::Dot;
  else if (a.interaction == "concat") mc.interaction = InteractionKind::Concat;
  else fail_arg("unknown interaction '", a.interaction, "' (dot|concat)");

  require_arg(!(a.cache && a.no_tt), "--cache requires TT tables; drop --no-tt");
  std::vector<index_t> rows = a.table_rows;
  if (!a.criteo.empty() && rows.size() == 1)
    rows.assign(static_cast<size_t>(kCriteoCat), rows[0]);
  for (index_t r : rows) {
    TableConfig tc;
    tc.num_rows = r;
    tc.use_tt = !a.no_tt;
    tc.rank = a.rank;
    tc.tt_dim = a.tt_dim;
    tc.use_cache = a.cache;
    tc.cache_capacity = a.cache_capacity;
    mc.tables.push_back(tc);
  }

  TrainConfig tc;
  tc.iterations = a.iterations;
  tc.batch_size = a.batch_size;
  tc.lr = a.lr;
  tc.warmup_fraction = a.warmup_frac;
  tc.refresh_period = a.refresh_period;
  tc.micro_batch = a.micro_batch;
  tc.save_intermediates = !a.no_save_intermediates;
  tc.seed = a.seed;
  tc.tt_init = parse_init(a);
  tc.eval_batches = a.eval_batches;
  tc.metrics_every = a.metrics_every;
  tc.collect_timing = !a.no_timing;

  std::unique_ptr<DataSource> source;
  if (!a.criteo.empty()) {
    require_arg(static_cast<index_t>(rows.size()) == kCriteoCat, "--criteo needs ", kCriteoCat,
                " table sizes (or one value to broadcast)");
    source = std::make_unique<CriteoDataSource>(a.criteo, rows, a.batch_size);
  } else {
    SyntheticConfig sc;
    sc.dense_features = mc.dense_features;
    sc.table_rows = rows;
    sc.zipf_exponent = a.zipf_s;
    sc.batch_size = a.batch_size;
    sc.pooling_factor = a.pooling_factor;
    sc.pooling = a.pooling == "mean" ? Pooling::Mean : Pooling::Sum;
    sc.margin = a.margin;
    source = std::make_unique<SyntheticDataSource>(sc, a.seed);
  }

  DlrmModel<T> model(mc);
  Metrics metrics = train(model, tc, *source);

  if (!a.metrics_out.empty()) {
    std::ofstream file;
    std::ostream& os = open_or_stdout(file, a.metrics_out);
    metrics.write_csv(os, !a.no_timing);
  }
  if (!a.checkpoint_out.empty()) {
    Checkpoint cp;
    model.save_checkpoint(cp);
    cp.save(a.checkpoint_out);
    std::cout << "checkpoint=" << a.checkpoint_out << "\n";
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "params=%lld\nfinal_loss=%.6f\nfinal_accuracy=%.4f\nhit_rate=%.4f\n",
                static_cast<long long>(metrics.total_params), metrics.final_loss,
                metrics.final_accuracy, model.hit_rate());
  std::cout << buf;
}

void run_train(const TrainArgs& a) {
  if (a.dtype == "f32") run_train_typed<float>(a);
  else if (a.dtype == "f64") run_train_typed<double>(a);
  else fail_arg("unknown dtype '", a.dtype, "' (f32|f64)");
}

// ---- bench ---------------------------------------------------------------

struct BenchArgs {
  BenchConfig cfg;
  std::string out, dtype = "f32";
  bool no_serial = false;
};

template <Scalar T>
void run_bench_typed(BenchArgs a) {
  a.cfg.include_serial = !a.no_serial;
  auto rows = bench_pooling<T>(a.cfg);
  std::ofstream file;
  std::ostream& os = open_or_stdout(file, a.out);
  os << "pooling,rank,fwd_us_per_sample,bwd_us_per_sample,fwd_us_per_lookup,"
        "bwd_us_per_lookup,serial_fwd_us_per_lookup,serial_bwd_us_per_lookup,"
        "fwd_spread_us,bwd_spread_us\n";
  char buf[320];
  for (const BenchRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%lld,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n",
                  static_cast<long long>(r.pooling), static_cast<long long>(r.rank),
                  r.fwd_us_per_sample, r.bwd_us_per_sample, r.fwd_us_per_lookup,
                  r.bwd_us_per_lookup, r.serial_fwd_us_per_lookup, r.serial_bwd_us_per_lookup,
                  r.fwd_spread_us, r.bwd_spread_us);
    os << buf;
  }
}

// ---- cache-sim -----------------------------------------------------------

struct CacheSimArgs {
  index_t rows = 1000000;
  index_t capacity = 0;
  double capacity_pct = 0.0;  // percent of rows; 0 -> default 0.01%
  double zipf_s = 1.05;
  index_t accesses_per_iter = 1024;
  index_t iters = 1000;
  double warmup_frac = 0.1;
  index_t refresh_period = 1000;
  index_t emb_dim = 16;
  index_t rank = 8;
  int tt_dim = 3;
  std::uint64_t seed = 0;
  std::string out;
};

void run_cache_sim(const CacheSimArgs& a) {
  TtTable<float> table(plan_shapes(a.rows, a.emb_dim, a.tt_dim, a.rank), "cache-sim");
  init_tt_cores(table, InitSpec::sampled_gaussian(), a.seed);
  index_t capacity = a.capacity;
  if (capacity <= 0 && a.capacity_pct > 0)
    capacity = std::max<index_t>(
        1, static_cast<index_t>(std::llround(a.capacity_pct / 100.0 * a.rows)));
  if (capacity <= 0) capacity = LfuCache<float>::default_capacity(a.rows);
  LfuCache<float> cache(capacity, a.emb_dim, a.refresh_period);
  ZipfianSampler sampler(a.rows, a.zipf_s);
  Rng rng = Rng::derive(a.seed, 0xCACE5ull);

  const index_t warmup_iters =
      static_cast<index_t>(static_cast<double>(a.iters) * a.warmup_frac);
  std::ofstream file;
  std::ostream& os = open_or_stdout(file, a.out);
  os << "iter,hit_rate,drift,resident_rows\n";
  char buf[160];
  double drift = 0.0;
  for (index_t iter = 0; iter < a.iters; ++iter) {
    if (iter == warmup_iters) cache.warmup_finalize(table);
    else if (iter > warmup_iters && (iter - warmup_iters) % a.refresh_period == 0)
      drift = cache.refresh(table);
    IndexBatch batch = generate_zipfian_batch(sampler, rng, a.accesses_per_iter, 1);
    cache.record_and_partition(batch);
    std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.6f,%lld\n", static_cast<long long>(iter),
                  cache.hit_rate(), drift, static_cast<long long>(cache.resident_count()));
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "capacity=%lld\nfinal_hit_rate=%.6f\n",
                static_cast<long long>(capacity), cache.hit_rate());
  std::cout << buf;
}

// ---- init-stats ----------------------------------------------------------

struct InitStatsArgs {
  std::string dist = "sampled";
  double a = -1.0, b = 1.0, mu = 0.0, sigma2 = 1.0;
  double threshold = 2.0, target_sigma2 = 0.0;
  std::string scaling = "moment-matched";
  bool one_sided = false;
  int tt_dim = 3;
  index_t emb_dim = 16;
  std::uint64_t samples = 1000000;
  int bins = 64;
  std::string range;  // "lo:hi"
  std::uint64_t seed = 0;
  std::string out;
};

void run_init_stats(const InitStatsArgs& a) {
  InitSpec spec;
  if (a.dist == "sampled") {
    spec = InitSpec::sampled_gaussian(a.threshold, a.target_sigma2, parse_scaling(a.scaling),
                                      a.one_sided);
  } else if (a.dist == "uniform") {
    spec = InitSpec::uniform(a.a, a.b);
    auto [mu, sigma2] = kl_optimal_gaussian(a.a, a.b);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "kl_optimal_mu=%.17g\nkl_optimal_sigma2=%.17g\n", mu,
                  sigma2);
    std::cout << buf;
  } else if (a.dist == "gaussian") {
    spec = InitSpec::gaussian(a.mu, a.sigma2);
  } else {
    fail_arg("unknown dist '", a.dist, "' (sampled|uniform|gaussian)");
  }

  std::optional<std::pair<double, double>> range;
  if (!a.range.empty()) {
    const auto pos = a.range.find(':');
    require_arg(pos != std::string::npos, "--range expects lo:hi, got '", a.range, "'");
    range = {std::stod(a.range.substr(0, pos)), std::stod(a.range.substr(pos + 1))};
  }

  Histogram h = product_distribution_histogram(spec, a.tt_dim, a.emb_dim, a.samples, a.bins,
                                               a.seed, range);

  // moment summary over a fresh stream
  Rng rng = Rng::derive(a.seed, 0x5747ull);
  double m1 = 0, m2 = 0;
  for (std::uint64_t s = 0; s < a.samples; ++s) {
    double prod = 1.0;
    for (int k = 0; k < a.tt_dim; ++k) prod *= draw_entry(spec, a.tt_dim, a.emb_dim, rng);
    m1 += prod;
    m2 += prod * prod;
  }
  m1 /= static_cast<double>(a.samples);
  m2 /= static_cast<double>(a.samples);
  char buf[256];
  std::snprintf(buf, sizeof(buf), "product_mean=%.8g\nproduct_second_moment=%.8g\n", m1, m2);
  std::cout << buf;
  if (spec.kind == InitKind::SampledGaussian) {
    std::snprintf(buf, sizeof(buf), "target_sigma2=%.8g\nentry_scale=%.8g\n",
                  resolved_target_sigma2(spec, a.emb_dim),
                  sampled_entry_scale(spec, a.tt_dim, a.emb_dim));
    std::cout << buf;
  }

  std::ofstream file;
  std::ostream& os = open_or_stdout(file, a.out);
  os << "bin_lo,bin_hi,count,density\n";
  for (size_t b = 0; b < h.counts.size(); ++b) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%llu,%.9g\n", h.edges[b], h.edges[b + 1],
                  static_cast<unsigned long long>(h.counts[b]), h.density[b]);
    os << buf;
  }
}

// ---- inspect -------------------------------------------------------------

void run_inspect(const std::string& path) {
  Checkpoint cp = Checkpoint::load(path);
  std::cout << cp.header_json(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TT-compressed embedding tables: planning, training, benchmarks"};
  app.require_subcommand(1);
  app.set_config("--config", "", "options file: [subcommand] sections of key=value lines");
  std::function<void()> action;

  int threads = 0;
  app.add_option("--threads", threads, "OpenMP thread count (0 = runtime default)")
      ->capture_default_str();

  // plan
  PlanArgs plan_args;
  auto* plan = app.add_subcommand("plan", "Derive TT shapes for a table");
  plan->fallthrough();
  plan->add_option("--rows", plan_args.rows, "logical row count");
  plan->add_option("--dim", plan_args.dim, "embedding dimension");
  plan->add_option("--tt-dim", plan_args.tt_dim, "number of TT cores")->capture_default_str();
  plan->add_option("--rank", plan_args.rank, "TT rank (0 with --table2 = all of 16,32,64)")
      ->capture_default_str();
  plan->add_option("--row-factors", plan_args.row_factors, "explicit row factors")
      ->delimiter(',');
  plan->add_option("--col-factors", plan_args.col_factors, "explicit col factors")
      ->delimiter(',');
  plan->add_flag("--table2", plan_args.table2, "emit plans for the built-in reference tables");
  plan->callback([&] { action = [&] { run_plan(plan_args); }; });

  // train
  TrainArgs train_args;
  auto* tr = app.add_subcommand("train", "Train the toy recommendation model");
  tr->fallthrough();
  tr->add_option("--table-rows", train_args.table_rows, "rows per categorical table")
      ->delimiter(',')
      ->capture_default_str();
  tr->add_flag("--no-tt", train_args.no_tt, "use uncompressed tables");
  tr->add_option("--rank", train_args.rank, "TT rank")->capture_default_str();
  tr->add_option("--tt-dim", train_args.tt_dim, "TT cores per table")->capture_default_str();
  tr->add_flag("--cache", train_args.cache, "enable the LFU row cache");
  tr->add_option("--cache-capacity", train_args.cache_capacity,
                 "cached rows per table (0 = 0.01% of rows)");
  tr->add_option("--emb-dim", train_args.emb_dim, "embedding dimension")->capture_default_str();
  tr->add_option("--dense-features", train_args.dense_features, "dense feature count")
      ->capture_default_str();
  tr->add_option("--bottom-mlp", train_args.bottom_mlp, "bottom MLP widths")->delimiter(',');
  tr->add_option("--top-mlp", train_args.top_mlp, "top MLP widths")->delimiter(',');
  tr->add_option("--interaction", train_args.interaction, "dot|concat")->capture_default_str();
  tr->add_option("--pooling", train_args.pooling, "sum|mean")->capture_default_str();
  tr->add_option("--pooling-factor", train_args.pooling_factor, "lookups per bag")
      ->capture_default_str();
  tr->add_option("--zipf-s", train_args.zipf_s, "Zipf exponent of the synthetic stream")
      ->capture_default_str();
  tr->add_option("--margin", train_args.margin, "teacher margin filter")->capture_default_str();
  tr->add_option("--iterations", train_args.iterations, "training iterations")
      ->capture_default_str();
  tr->add_option("--batch-size", train_args.batch_size, "samples per iteration")
      ->capture_default_str();
  tr->add_option("--lr", train_args.lr, "learning rate")->capture_default_str();
  tr->add_option("--warmup-frac", train_args.warmup_frac, "cache warm-up fraction")
      ->capture_default_str();
  tr->add_option("--refresh-period", train_args.refresh_period, "cache refresh period")
      ->capture_default_str();
  tr->add_option("--micro-batch", train_args.micro_batch, "kernel chunk size")
      ->capture_default_str();
  tr->add_flag("--no-save-intermediates", train_args.no_save_intermediates,
               "recompute stage products in backward");
  tr->add_option("--init", train_args.init, "sampled|uniform|gaussian")->capture_default_str();
  tr->add_option("--init-a", train_args.init_a, "uniform lower bound");
  tr->add_option("--init-b", train_args.init_b, "uniform upper bound");
  tr->add_option("--init-mu", train_args.init_mu, "gaussian mean");
  tr->add_option("--init-sigma2", train_args.init_sigma2, "gaussian variance");
  tr->add_option("--threshold", train_args.threshold, "tail threshold of the sampled init")
      ->capture_default_str();
  tr->add_option("--target-sigma2", train_args.target_sigma2,
                 "product variance target (0 = 1/(3*emb_dim))");
  tr->add_option("--scaling", train_args.scaling, "moment-matched|root|inverse-root")
      ->capture_default_str();
  tr->add_flag("--one-sided", train_args.one_sided, "audit: keep upper-tail draws only");
  tr->add_option("--criteo", train_args.criteo, "train from a Criteo-format file");
  tr->add_option("--eval-batches", train_args.eval_batches, "held-out batches")
      ->capture_default_str();
  tr->add_option("--metrics-every", train_args.metrics_every, "metrics row cadence")
      ->capture_default_str();
  tr->add_flag("--no-timing", train_args.no_timing, "write 0 in the ms column (byte-stable)");
  tr->add_option("--metrics-out", train_args.metrics_out, "metrics CSV path ('-' = stdout)");
  tr->add_option("--checkpoint-out", train_args.checkpoint_out, "checkpoint path");
  tr->add_option("--dtype", train_args.dtype, "f32|f64")->capture_default_str();
  tr->add_option("--seed", train_args.seed, "RNG seed")->capture_default_str();
  tr->callback([&] { action = [&] { run_train(train_args); }; });

  // bench
  BenchArgs bench_args;
  auto* be = app.add_subcommand("bench", "Embedding kernel timing sweep");
  be->fallthrough();
  be->add_option("--rows", bench_args.cfg.rows, "table rows")->capture_default_str();
  be->add_option("--emb-dim", bench_args.cfg.emb_dim, "embedding dimension")
      ->capture_default_str();
  be->add_option("--tt-dim", bench_args.cfg.tt_dim, "TT cores")->capture_default_str();
  be->add_option("--ranks", bench_args.cfg.ranks, "ranks to sweep")
      ->delimiter(',')
      ->capture_default_str();
  be->add_option("--poolings,--pooling", bench_args.cfg.poolings, "pooling factors to sweep")
      ->delimiter(',')
      ->capture_default_str();
  be->add_option("--bags", bench_args.cfg.bags, "bags per batch")->capture_default_str();
  be->add_option("--reps", bench_args.cfg.reps, "timing repetitions")->capture_default_str();
  be->add_option("--micro-batch", bench_args.cfg.micro_batch, "kernel chunk size")
      ->capture_default_str();
  be->add_option("--seed", bench_args.cfg.seed, "RNG seed")->capture_default_str();
  be->add_flag("--no-serial", bench_args.no_serial, "skip the serial reference columns");
  be->add_option("--out", bench_args.out, "CSV path ('-' = stdout)");
  be->add_option("--dtype", bench_args.dtype, "f32|f64")->capture_default_str();
  be->callback([&] {
    action = [&] {
      if (bench_args.dtype == "f32") run_bench_typed<float>(bench_args);
      else if (bench_args.dtype == "f64") run_bench_typed<double>(bench_args);
      else fail_arg("unknown dtype '", bench_args.dtype, "' (f32|f64)");
    };
  });

  // cache-sim
  CacheSimArgs sim_args;
  auto* cs = app.add_subcommand("cache-sim", "LFU cache behavior on a Zipfian stream");
  cs->fallthrough();
  cs->add_option("--rows", sim_args.rows, "table rows")->capture_default_str();
  cs->add_option("--capacity", sim_args.capacity, "cache capacity in rows");
  cs->add_option("--capacity-pct", sim_args.capacity_pct, "cache capacity as % of rows");
  cs->add_option("--zipf-s", sim_args.zipf_s, "Zipf exponent")->capture_default_str();
  cs->add_option("--accesses-per-iter", sim_args.accesses_per_iter, "lookups per iteration")
      ->capture_default_str();
  cs->add_option("--iters", sim_args.iters, "iterations")->capture_default_str();
  cs->add_option("--warmup-frac", sim_args.warmup_frac, "warm-up fraction")
      ->capture_default_str();
  cs->add_option("--refresh-period", sim_args.refresh_period, "refresh period")
      ->capture_default_str();
  cs->add_option("--emb-dim", sim_args.emb_dim, "embedding dimension")->capture_default_str();
  cs->add_option("--tt-dim", sim_args.tt_dim, "TT cores of the backing table")
      ->capture_default_str();
  cs->add_option("--rank", sim_args.rank, "TT rank of the backing table")
      ->capture_default_str();
  cs->add_option("--seed", sim_args.seed, "RNG seed")->capture_default_str();
  cs->add_option("--out", sim_args.out, "CSV path ('-' = stdout)");
  cs->callback([&] { action = [&] { run_cache_sim(sim_args); }; });

  // init-stats
  InitStatsArgs init_args;
  auto* is = app.add_subcommand("init-stats", "Initializer product-distribution statistics");
  is->fallthrough();
  is->add_option("--dist", init_args.dist, "sampled|uniform|gaussian")->capture_default_str();
  is->add_option("--a", init_args.a, "uniform lower bound")->capture_default_str();
  is->add_option("--b", init_args.b, "uniform upper bound")->capture_default_str();
  is->add_option("--mu", init_args.mu, "gaussian mean")->capture_default_str();
  is->add_option("--sigma2", init_args.sigma2, "gaussian variance")->capture_default_str();
  is->add_option("--threshold", init_args.threshold, "tail threshold")->capture_default_str();
  is->add_option("--target-sigma2", init_args.target_sigma2,
                 "product variance target (0 = 1/(3*emb_dim))");
  is->add_option("--scaling", init_args.scaling, "moment-matched|root|inverse-root")
      ->capture_default_str();
  is->add_flag("--one-sided", init_args.one_sided, "audit: keep upper-tail draws only");
  is->add_option("--tt-dim", init_args.tt_dim, "factors per product")->capture_default_str();
  is->add_option("--emb-dim", init_args.emb_dim, "embedding dimension")->capture_default_str();
  is->add_option("--samples", init_args.samples, "Monte Carlo samples")->capture_default_str();
  is->add_option("--bins", init_args.bins, "histogram bins")->capture_default_str();
  is->add_option("--range", init_args.range, "histogram range lo:hi");
  is->add_option("--seed", init_args.seed, "RNG seed")->capture_default_str();
  is->add_option("--out", init_args.out, "histogram CSV path ('-' = stdout)");
  is->callback([&] { action = [&] { run_init_stats(init_args); }; });

  // inspect
  std::string inspect_path;
  auto* in = app.add_subcommand("inspect", "Print a checkpoint's header");
  in->fallthrough();
  in->add_option("path", inspect_path, "checkpoint file")->required();
  in->callback([&] { action = [&] { run_inspect(inspect_path); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (threads > 0) omp_set_num_threads(threads);
  try {
    action();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

// Compares the OpenMP embedding kernels against the serial reference
// implementation across thread counts.
#include <omp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "ttrec/bench.hpp"

using namespace ttrec;

int main(int argc, char** argv) {
  CLI::App app{"Parallel vs serial embedding kernel comparison"};
  BenchConfig cfg;
  cfg.ranks = {8, 32};
  std::vector<int> threads;
  std::string dtype = "f32";
  app.add_option("--rows", cfg.rows, "table rows")->capture_default_str();
  app.add_option("--emb-dim", cfg.emb_dim, "embedding dimension")->capture_default_str();
  app.add_option("--tt-dim", cfg.tt_dim, "TT cores")->capture_default_str();
  app.add_option("--ranks", cfg.ranks, "ranks to sweep")->delimiter(',')->capture_default_str();
  app.add_option("--poolings", cfg.poolings, "pooling factors")
      ->delimiter(',')
      ->capture_default_str();
  app.add_option("--bags", cfg.bags, "bags per batch")->capture_default_str();
  app.add_option("--reps", cfg.reps, "timing repetitions")->capture_default_str();
  app.add_option("--seed", cfg.seed, "RNG seed")->capture_default_str();
  app.add_option("--threads", threads, "thread counts to sweep (default: 1 and max)")
      ->delimiter(',');
  app.add_option("--dtype", dtype, "f32|f64")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  if (threads.empty()) {
    threads.push_back(1);
    if (omp_get_max_threads() > 1) threads.push_back(omp_get_max_threads());
  }

  auto sweep = [&](auto tag) {
    using T = decltype(tag);
    std::printf("threads,pooling,rank,par_fwd_us_per_lookup,ser_fwd_us_per_lookup,fwd_speedup,"
                "par_bwd_us_per_lookup,ser_bwd_us_per_lookup,bwd_speedup\n");
    for (int t : threads) {
      omp_set_num_threads(t);
      for (const BenchRow& r : bench_pooling<T>(cfg)) {
        std::printf("%d,%lld,%lld,%.4f,%.4f,%.2f,%.4f,%.4f,%.2f\n", t,
                    static_cast<long long>(r.pooling), static_cast<long long>(r.rank),
                    r.fwd_us_per_lookup, r.serial_fwd_us_per_lookup,
                    r.fwd_us_per_lookup > 0 ? r.serial_fwd_us_per_lookup / r.fwd_us_per_lookup
                                            : 0.0,
                    r.bwd_us_per_lookup, r.serial_bwd_us_per_lookup,
                    r.bwd_us_per_lookup > 0 ? r.serial_bwd_us_per_lookup / r.bwd_us_per_lookup
                                            : 0.0);
      }
    }
  };
  try {
    if (dtype == "f32") sweep(float{});
    else if (dtype == "f64") sweep(double{});
    else {
      std::cerr << "error: unknown dtype '" << dtype << "'\n";
      return 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

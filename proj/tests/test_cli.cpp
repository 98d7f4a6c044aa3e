// End-to-end tests for the ttrec command-line tool. The binary path and the
// golden-file directory arrive via TTREC_BIN_PATH / TTREC_GOLDEN_DIR.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "ttrec/shape_plan.hpp"

using namespace ttrec;

namespace {

struct RunResult {
  int code = -1;
  std::string out;  // stdout + stderr interleaved
};

const char* bin_path() {
  if (const char* p = std::getenv("TTREC_BIN_PATH")) return p;
  return TTREC_BIN_PATH;  // baked in at configure time
}

RunResult run(const std::string& args) {
  const std::string cmd = std::string(bin_path()) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string golden(const std::string& name) {
  const char* dir = std::getenv("TTREC_GOLDEN_DIR");
  return slurp(std::string(dir ? dir : TTREC_GOLDEN_DIR) + "/" + name);
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

// value of a "key=value" line in tool output
std::string field(const std::string& out, const std::string& key) {
  const std::string tag = key + "=";
  size_t pos = 0;
  while (pos < out.size()) {
    const size_t eol = out.find('\n', pos);
    const std::string line = out.substr(pos, eol == std::string::npos ? eol : eol - pos);
    if (line.rfind(tag, 0) == 0) return line.substr(tag.size());
    if (eol == std::string::npos) break;
    pos = eol + 1;
  }
  return "";
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) lines.push_back(line);
  return lines;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("ttrec_cli_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("help and usage errors use the documented exit codes") {
  CHECK(run("--help").code == 0);
  CHECK(contains(run("--help").out, "plan"));
  CHECK(run("plan --help").code == 0);
  CHECK(run("train --help").code == 0);

  CHECK(run("").code == 2);                 // missing subcommand
  CHECK(run("frobnicate").code == 2);       // unknown subcommand
  CHECK(run("plan --bogus 3").code == 2);   // unknown flag
  CHECK(run("inspect").code == 2);          // missing required positional

  // runtime validation also maps to exit 2
  RunResult bad = run("plan --rows -5 --dim 16 --rank 8");
  CHECK(bad.code == 2);
  CHECK(contains(bad.out, "error"));
  CHECK(run("train --iterations 0").code == 2);
  CHECK(run("train --dtype f16 --iterations 2").code == 2);
  CHECK(run("train --interaction cross --iterations 2").code == 2);

  // missing input files map to exit 1
  CHECK(run("inspect /nonexistent/path.ck").code == 1);
}

TEST_CASE("plan prints the shape fields and the derived parameter counts") {
  RunResult r = run("plan --rows 1000000 --dim 16 --tt-dim 3 --rank 8");
  REQUIRE(r.code == 0);
  CHECK(contains(r.out, "rows=1000000 dim=16 tt_dim=3"));
  CHECK(contains(r.out, "col_factors=2,2,4"));
  CHECK(contains(r.out, "cores="));

  const ShapePlan plan = plan_shapes(1000000, 16, 3, 8);
  CHECK(field(r.out, "params") == std::to_string(plan.parameter_count()));
  CHECK(field(r.out, "reduction") == std::to_string(plan.memory_reduction()));
  CHECK(field(r.out, "padded_rows") == std::to_string(plan.padded_rows()));

  RunResult ex = run(
      "plan --rows 1000 --dim 8 --tt-dim 3 --row-factors 10,10,10 --col-factors 2,2,2 "
      "--rank 4");
  REQUIRE(ex.code == 0);
  CHECK(field(ex.out, "row_factors") == "10,10,10");
  CHECK(field(ex.out, "col_factors") == "2,2,2");
  CHECK(field(ex.out, "ranks") == "1,4,4,1");
  CHECK(field(ex.out, "padded_rows") == "1000");

  // embedding dims without a valid factorization are rejected
  RunResult prime = run("plan --rows 1000 --dim 7 --tt-dim 3 --rank 4");
  CHECK(prime.code == 2);
  CHECK(contains(prime.out, "col_factors"));
}

TEST_CASE("plan --table2 output matches the frozen reference grids") {
  const std::string g16 = golden("table2_r16.txt");
  const std::string g32 = golden("table2_r32.txt");
  const std::string g64 = golden("table2_r64.txt");

  for (const auto& [rank, g] : {std::pair{16, &g16}, {32, &g32}, {64, &g64}}) {
    RunResult r = run("plan --table2 --rank " + std::to_string(rank));
    REQUIRE(r.code == 0);
    CHECK(r.out == *g);
  }

  // rank 0 sweeps all three grids with rank= headers
  RunResult all = run("plan --table2 --rank 0");
  REQUIRE(all.code == 0);
  CHECK(all.out == "rank=16\n" + g16 + "rank=32\n" + g32 + "rank=64\n" + g64);
}

TEST_CASE("train runs deterministically and writes byte-stable artifacts") {
  TempDir dir;
  const std::string stem =
      "train --table-rows 300 --emb-dim 4 --tt-dim 2 --rank 2 --bottom-mlp 4 "
      "--top-mlp 4,1 --iterations 24 --batch-size 8 --lr 0.05 --metrics-every 6 "
      "--eval-batches 2 --no-timing";
  const std::string base = stem + " --seed 11";

  RunResult r1 = run(base + " --metrics-out " + dir.file("m1.csv") + " --checkpoint-out " +
                     dir.file("c1.ck"));
  REQUIRE(r1.code == 0);
  CHECK(field(r1.out, "params") != "");
  CHECK(field(r1.out, "final_loss") != "");
  CHECK(field(r1.out, "final_accuracy") != "");
  CHECK(field(r1.out, "hit_rate") == "0.0000");  // no cache configured

  RunResult r2 = run(base + " --metrics-out " + dir.file("m2.csv") + " --checkpoint-out " +
                     dir.file("c2.ck"));
  REQUIRE(r2.code == 0);
  CHECK(slurp(dir.file("m1.csv")) == slurp(dir.file("m2.csv")));
  CHECK(slurp(dir.file("c1.ck")) == slurp(dir.file("c2.ck")));

  const auto rows = lines_of(slurp(dir.file("m1.csv")));
  REQUIRE(rows.size() == 6u);  // header + iterations 0,6,12,18,23
  CHECK(rows[0] == "iter,loss,accuracy,hit_rate,ms_per_iter");
  CHECK(rows[1].rfind("0,", 0) == 0);
  CHECK(rows[5].rfind("23,", 0) == 0);
  for (size_t i = 1; i < rows.size(); ++i)  // --no-timing pins the ms column
    CHECK(rows[i].substr(rows[i].size() - 2) == ",0");

  RunResult r3 = run(stem + " --seed 12 --metrics-out " + dir.file("m3.csv"));
  REQUIRE(r3.code == 0);
  CHECK(slurp(dir.file("m3.csv")) != slurp(dir.file("m1.csv")));

  // '-' sends the metrics CSV to stdout
  RunResult r4 = run(base + " --metrics-out -");
  REQUIRE(r4.code == 0);
  CHECK(contains(r4.out, "iter,loss,accuracy,hit_rate,ms_per_iter"));

  // the same options can come from a [train] section of a config file
  const std::string cfg = dir.file("train.cfg");
  {
    std::ofstream os(cfg);
    os << "[train]\n"
          "table-rows=300\nemb-dim=4\ntt-dim=2\nrank=2\nbottom-mlp=4\ntop-mlp=4,1\n"
          "iterations=24\nbatch-size=8\nlr=0.05\nmetrics-every=6\neval-batches=2\n"
          "no-timing=true\nseed=11\n";
  }
  RunResult rc = run("train --config " + cfg + " --metrics-out " + dir.file("mc.csv"));
  REQUIRE(rc.code == 0);
  CHECK(slurp(dir.file("mc.csv")) == slurp(dir.file("m1.csv")));
}

TEST_CASE("train covers cache, uncompressed, and f32 variants") {
  const std::string base =
      " --emb-dim 4 --tt-dim 2 --rank 2 --bottom-mlp 4 --top-mlp 4,1 --batch-size 16 "
      "--iterations 30 --eval-batches 2 --no-timing --seed 3";

  RunResult cached = run("train --table-rows 400 --cache --cache-capacity 16 --zipf-s 1.2 "
                         "--warmup-frac 0.2 --refresh-period 10 --dtype f32" +
                         base);
  REQUIRE(cached.code == 0);
  const std::string hr = field(cached.out, "hit_rate");
  REQUIRE(hr != "");
  CHECK(std::stod(hr) > 0.05);  // hot rows of a zipf(1.2) stream land in the cache

  RunResult dense = run("train --table-rows 200 --no-tt" + base);
  CHECK(dense.code == 0);

  // cache without TT tables is rejected by the embedding layer
  RunResult bad = run("train --table-rows 200 --no-tt --cache" + base);
  CHECK(bad.code == 2);
  CHECK(contains(bad.out, "cache"));
}

TEST_CASE("inspect prints checkpoint headers") {
  TempDir dir;
  const std::string ck = dir.file("model.ck");
  RunResult tr = run("train --table-rows 120 --emb-dim 4 --tt-dim 2 --rank 2 --bottom-mlp 4 "
                     "--top-mlp 4,1 --iterations 4 --batch-size 4 --eval-batches 1 "
                     "--no-timing --checkpoint-out " +
                     ck);
  REQUIRE(tr.code == 0);

  RunResult ins = run("inspect " + ck);
  REQUIRE(ins.code == 0);
  CHECK(contains(ins.out, "\"format\""));
  CHECK(contains(ins.out, "table0"));
  CHECK(contains(ins.out, "bottom.w0"));
  CHECK(contains(ins.out, "top.w0"));
}

TEST_CASE("bench emits the documented csv schema") {
  TempDir dir;
  const std::string csv = dir.file("bench.csv");
  RunResult r = run("bench --rows 512 --emb-dim 4 --tt-dim 2 --ranks 2,4 --poolings 1 "
                    "--bags 16 --reps 2 --out " +
                    csv);
  REQUIRE(r.code == 0);
  const auto rows = lines_of(slurp(csv));
  REQUIRE(rows.size() == 3u);  // header + (1 pooling x 2 ranks)
  CHECK(rows[0] ==
        "pooling,rank,fwd_us_per_sample,bwd_us_per_sample,fwd_us_per_lookup,"
        "bwd_us_per_lookup,serial_fwd_us_per_lookup,serial_bwd_us_per_lookup,"
        "fwd_spread_us,bwd_spread_us");
  CHECK(rows[1].rfind("1,2,", 0) == 0);
  CHECK(rows[2].rfind("1,4,", 0) == 0);

  RunResult fast = run("bench --rows 512 --emb-dim 4 --tt-dim 2 --ranks 2 --poolings 1 "
                       "--bags 8 --reps 1 --no-serial --out -");
  CHECK(fast.code == 0);
}

TEST_CASE("cache-sim reports hit rates on a zipf stream") {
  TempDir dir;
  const std::string csv = dir.file("sim.csv");
  RunResult r = run("cache-sim --rows 2000 --capacity 64 --zipf-s 1.1 "
                    "--accesses-per-iter 256 --iters 30 --warmup-frac 0.2 "
                    "--refresh-period 10 --emb-dim 4 --tt-dim 2 --rank 2 --out " +
                    csv);
  REQUIRE(r.code == 0);
  CHECK(field(r.out, "capacity") == "64");
  const std::string fhr = field(r.out, "final_hit_rate");
  REQUIRE(fhr != "");
  CHECK(std::stod(fhr) > 0.1);

  const auto rows = lines_of(slurp(csv));
  REQUIRE(rows.size() == 31u);  // header + one row per iteration
  CHECK(rows[0] == "iter,hit_rate,drift,resident_rows");
  CHECK(rows[1].rfind("0,", 0) == 0);

  // percentage capacity: 1% of 2000 rows = 20 slots
  RunResult pct = run("cache-sim --rows 2000 --capacity-pct 1 --iters 4 --emb-dim 4 "
                      "--tt-dim 2 --rank 2 --out " +
                      dir.file("pct.csv"));
  REQUIRE(pct.code == 0);
  CHECK(field(pct.out, "capacity") == "20");
}

TEST_CASE("init-stats reports the distribution constants and a histogram") {
  TempDir dir;
  RunResult uni = run("init-stats --dist uniform --a -1 --b 3 --samples 2000 --bins 10 "
                      "--out " +
                      dir.file("u.csv"));
  REQUIRE(uni.code == 0);
  CHECK(field(uni.out, "kl_optimal_mu") == "1");
  CHECK(contains(field(uni.out, "kl_optimal_sigma2"), "1.333333333333333"));
  CHECK(field(uni.out, "product_mean") != "");

  const std::string hcsv = dir.file("h.csv");
  RunResult samp = run("init-stats --dist sampled --threshold 2 --tt-dim 3 --emb-dim 16 "
                       "--samples 20000 --bins 8 --seed 5 --out " +
                       hcsv);
  REQUIRE(samp.code == 0);
  CHECK(contains(field(samp.out, "target_sigma2"), "0.0208333"));
  CHECK(field(samp.out, "entry_scale") != "");
  const double m2 = std::stod(field(samp.out, "product_second_moment"));
  CHECK(m2 > 0.015);  // second moment of the matched product sits near 1/48
  CHECK(m2 < 0.027);

  const auto rows = lines_of(slurp(hcsv));
  REQUIRE(rows.size() == 9u);  // header + 8 bins
  CHECK(rows[0] == "bin_lo,bin_hi,count,density");

  CHECK(run("init-stats --dist cauchy").code == 2);
  CHECK(run("init-stats --bins 0").code == 2);
}

TEST_CASE("the global --threads flag applies to any subcommand") {
  CHECK(run("--threads 2 plan --rows 1000 --dim 4 --tt-dim 2 --rank 2").code == 0);
  CHECK(run("--threads 2 bench --rows 256 --emb-dim 4 --tt-dim 2 --ranks 2 --poolings 1 "
            "--bags 4 --reps 1 --out -")
            .code == 0);
}

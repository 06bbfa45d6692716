#include <gtest/gtest.h>

#include <charconv>

#include "support.hpp"

using namespace gridsim;
using nlohmann::json;

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Scenario minimal() { return load_scenario(testkit::scenario_dir() / "minimal.json"); }

SweepGrid rate_grid() {
  return parse_grid(json{{"parameters", {{{"path", "/workload/generators/0/rate"},
                                          {"values", {0.002, 0.005, 0.01}}}}},
                         {"seeds", {1, 2}}});
}

}  // namespace

TEST(Fmt, RoundTrips) {
  for (double v : {0.0, 1.0, 0.1, 1.0 / 3.0, 1e-300, 123456789.125, -2.5}) {
    const auto s = fmt(v);
    double back = 0.0;
    std::from_chars(s.data(), s.data() + s.size(), back);
    EXPECT_EQ(back, v) << s;
  }
  EXPECT_EQ(fmt(2.0), "2");
  EXPECT_EQ(fmt(0.5), "0.5");
}

TEST(WriteAtomic, ReplacesWholeFile) {
  TempDir d("gridsim-atomic");
  fs::create_directories(d.path);
  const auto f = d.path / "x.txt";
  write_atomic(f, "first version, long");
  write_atomic(f, "second");
  EXPECT_EQ(testkit::slurp(f), "second");
  EXPECT_FALSE(fs::exists(d.path / "x.txt.tmp"));
}

TEST(RunScenario, WritesAllArtifacts) {
  TempDir d("gridsim-run");
  RunOptions opt;
  opt.out_dir = d.path;
  const auto res = run_scenario(minimal(), opt);
  ASSERT_TRUE(res.ok) << res.error;
  for (const char* f : {"trace.ndjson", "metrics.csv", "usage.ndjson", "report.json"})
    EXPECT_TRUE(fs::exists(d.path / f)) << f;
  const auto report = json::parse(testkit::slurp(d.path / "report.json"));
  EXPECT_EQ(report["scenario"], "minimal");
  EXPECT_EQ(report.dump(), json::parse(res.summary.dump()).dump());
}

TEST(RunScenario, ByteIdenticalReruns) {
  TempDir a("gridsim-rerun-a"), b("gridsim-rerun-b");
  RunOptions opt;
  opt.out_dir = a.path;
  run_scenario(minimal(), opt);
  opt.out_dir = b.path;
  run_scenario(minimal(), opt);
  for (const char* f : {"trace.ndjson", "metrics.csv", "usage.ndjson", "report.json"})
    EXPECT_EQ(testkit::slurp(a.path / f), testkit::slurp(b.path / f)) << f;
}

TEST(RunScenario, ZeroDurationIsEmpty) {
  TempDir d("gridsim-zero");
  RunOptions opt;
  opt.out_dir = d.path;
  opt.duration = 0.0;
  const auto res = run_scenario(minimal(), opt);
  ASSERT_TRUE(res.ok) << res.error;
  EXPECT_EQ(testkit::slurp(d.path / "trace.ndjson"), "");
  const auto report = json::parse(testkit::slurp(d.path / "report.json"));
  EXPECT_EQ(report["jobs"]["done"], 0);
  EXPECT_TRUE(report["bills"].is_array());
}

TEST(Sweep, RowPerPointAndSeed) {
  const auto res = sweep(minimal(), rate_grid(), 1);
  ASSERT_EQ(res.rows.size(), 6u);
  for (std::size_t k = 0; k < res.rows.size(); ++k) {
    EXPECT_TRUE(res.rows[k].ok) << res.rows[k].error;
    EXPECT_EQ(res.rows[k].point, k / 2);
    EXPECT_EQ(res.rows[k].seed, k % 2 == 0 ? 1u : 2u);
  }
  const auto csv = sweep_csv(res);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(Sweep, WorkerCountDoesNotChangeOutput) {
  const auto grid = rate_grid();
  const auto one = sweep(minimal(), grid, 1);
  const auto four = sweep(minimal(), grid, 4);
  EXPECT_EQ(sweep_csv(one), sweep_csv(four));
  EXPECT_EQ(sweep_summary_csv(one), sweep_summary_csv(four));
}

TEST(Sweep, BadGridRejected) {
  EXPECT_THROW(parse_grid(json{{"parameters", json::array()}}), ValidationError);
  EXPECT_THROW(parse_grid(json{{"parameters", {{{"path", "/a"}, {"values", json::array()}}}}}),
               ValidationError);
}

TEST(Tune, BestIsTheArgmin) {
  const auto [cands, seeds] =
      parse_tune_grid(json{{"queue", {0.5, 1, 2}}, {"transfer", {1}}, {"seeds", {1, 2}}});
  ASSERT_EQ(cands.size(), 3u);
  const auto res = tune_broker(minimal(), cands, seeds, 2);
  std::size_t argmin = 0;
  for (std::size_t i = 1; i < res.table.size(); ++i)
    if (res.table[i].objective < res.table[argmin].objective) argmin = i;
  EXPECT_EQ(res.best, argmin);
  for (const auto& row : res.table) {
    double sum = 0.0;
    for (double v : row.per_seed) sum += v;
    EXPECT_EQ(row.objective, sum / 2.0);
  }
}

TEST(Tune, SingleCandidateWins) {
  const auto res = tune_broker(minimal(), {TuneCandidate{3, 1, 1}}, {5});
  EXPECT_EQ(res.best, 0u);
  EXPECT_EQ(res.table.size(), 1u);
  EXPECT_THROW(tune_broker(minimal(), {}, {1}), ConfigError);
}

TEST(Hotspot, RaisesAnAlert) {
  const auto sc = load_scenario(testkit::scenario_dir() / "hotspot.json");
  Simulation sim(sc.materialize());
  sim.run();
  ASSERT_FALSE(sim.alerts().empty());
  EXPECT_GT(sim.alerts().front().t0, sc.duration / 2 - sc.metrics.window);
}

TEST(Simulation, NodeCountConservedOnShippedScenario) {
  const auto sc = load_scenario(testkit::scenario_dir() / "special_classes.json");
  auto cfg = sc.materialize();
  cfg.verify_invariants = true;
  Simulation sim(cfg);
  EXPECT_NO_THROW(sim.run());
  EXPECT_TRUE(sim.check_invariants().empty());
}

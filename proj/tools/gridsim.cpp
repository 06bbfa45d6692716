#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "gridsim/gridsim.hpp"

namespace fs = std::filesystem;
using namespace gridsim;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kRuntime = 2;

fs::path default_out_dir() {
  if (const char* env = std::getenv("GRIDSIM_OUT_DIR"); env && *env) return env;
  return "gridsim-out";
}

void print_problems(const ValidationError& e) {
  std::cerr << "invalid input:\n";
  for (const auto& p : e.problems()) std::cerr << "  " << p << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-event Grid simulator"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string grid_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  std::string out_dir;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  bool check = false;

  auto* validate = app.add_subcommand("validate", "Check a scenario file and list every problem");
  validate->add_option("--scenario", scenario_path, "Scenario file")->required();

  auto* run = app.add_subcommand("run", "Run one simulation and write its artifacts");
  run->add_option("--scenario", scenario_path, "Scenario file")->required();
  run->add_option("--seed", seed, "Override the master seed");
  run->add_option("--duration", duration, "Override the simulated duration (seconds)");
  run->add_option("--out-dir", out_dir, "Artifact directory (default $GRIDSIM_OUT_DIR)");
  run->add_flag("--check-invariants", check, "Verify run invariants after every event");

  auto* sw = app.add_subcommand("sweep", "Run a parameter grid over several seeds");
  sw->add_option("--scenario", scenario_path, "Scenario file")->required();
  sw->add_option("--grid", grid_path, "Sweep definition")->required();
  sw->add_option("--out-dir", out_dir, "Output directory (default $GRIDSIM_OUT_DIR)");
  sw->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* tune = app.add_subcommand("tune", "Search broker cost weights for the lowest mean turnaround");
  tune->add_option("--scenario", scenario_path, "Scenario file")->required();
  tune->add_option("--grid", grid_path, "Candidate weight grid")->required();
  tune->add_option("--out-dir", out_dir, "Output directory (default $GRIDSIM_OUT_DIR)");
  tune->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  int agents = 101;
  int strategies = 2;
  std::vector<int> memories{1, 2, 3, 4, 5, 6, 7, 8};
  int rounds = 10000;
  int warmup = 0;
  auto* mg = app.add_subcommand("mg", "Minority-game attendance variance against memory");
  mg->add_option("--agents", agents, "Number of agents (odd)");
  mg->add_option("--strategies", strategies, "Strategies per agent");
  mg->add_option("--memory", memories, "Memory lengths to sweep");
  mg->add_option("--rounds", rounds, "Scored rounds");
  mg->add_option("--warmup", warmup, "Unscored rounds before scoring");
  mg->add_option("--seed", seed, "Seed");
  mg->add_option("--out-dir", out_dir, "Output directory (default $GRIDSIM_OUT_DIR)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kInvalid;
  }
  const fs::path out = out_dir.empty() ? default_out_dir() : fs::path(out_dir);

  try {
    if (*validate) {
      load_scenario(scenario_path);
      std::cout << scenario_path << ": ok\n";
      return kOk;
    }
    if (*run) {
      const auto sc = load_scenario(scenario_path);
      RunOptions opt;
      opt.seed = seed;
      opt.duration = duration;
      opt.out_dir = out;
      opt.verify_invariants = check;
      if (duration && !(*duration >= 0.0)) throw ValidationError({"--duration: must be >= 0"});
      const auto res = run_scenario(sc, opt);
      std::cout << res.summary.dump(2) << "\n";
      if (!res.ok) {
        std::cerr << "run failed: " << res.error << "\n";
        return kRuntime;
      }
      return kOk;
    }
    if (*sw) {
      const auto sc = load_scenario(scenario_path);
      const auto grid = load_grid(grid_path);
      const auto res = sweep(sc, grid, jobs);
      fs::create_directories(out);
      write_atomic(out / "sweep.csv", sweep_csv(res));
      write_atomic(out / "sweep_summary.csv", sweep_summary_csv(res));
      std::cout << sweep_summary_csv(res);
      return kOk;
    }
    if (*tune) {
      const auto sc = load_scenario(scenario_path);
      std::ifstream in(grid_path);
      if (!in) throw ValidationError({grid_path + ": cannot open grid file"});
      json doc;
      try {
        doc = json::parse(in);
      } catch (const json::parse_error& e) {
        throw ValidationError({grid_path + ": " + e.what()});
      }
      const auto [cands, seeds] = parse_tune_grid(doc);
      const auto res = tune_broker(sc, cands, seeds, jobs);
      fs::create_directories(out);
      write_atomic(out / "tune.csv", tune_csv(res));
      std::cout << tune_csv(res);
      const auto& b = res.table[res.best].weights;
      std::cout << "best: queue=" << fmt(b.queue) << " transfer=" << fmt(b.transfer)
                << " execution=" << fmt(b.execution) << "\n";
      return kOk;
    }
    if (*mg) {
      MinorityGameConfig cfg{agents, 1, strategies};
      cfg.validate();
      if (rounds < 1) throw ValidationError({"--rounds: must be >= 1"});
      const auto rows = minority_study(agents, strategies, memories, rounds, seed.value_or(1), warmup);
      fs::create_directories(out);
      write_atomic(out / "mg.csv", minority_csv(rows));
      std::cout << minority_csv(rows);
      return kOk;
    }
  } catch (const ValidationError& e) {
    print_problems(e);
    return kInvalid;
  } catch (const ConfigError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

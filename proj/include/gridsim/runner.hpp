#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridsim/scenario.hpp"

namespace gridsim {

using ordered_json = nlohmann::ordered_json;

// Shortest round-trip decimal form; the same double always prints the same.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Writes through a temporary file and renames it into place, so a reader
// sees either the complete file or none.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw Error("short write on '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

struct RunArtifacts {
  std::filesystem::path trace;
  std::filesystem::path metrics;
  std::filesystem::path usage;
  std::filesystem::path report;
};

struct RunOutcome {
  bool ok = true;
  std::string error;
  ordered_json summary;
  std::optional<RunArtifacts> artifacts;
};

// --- summaries ---------------------------------------------------------------

struct JobStats {
  std::size_t total = 0;
  std::size_t done = 0;
  std::size_t failed = 0;
  std::size_t denied = 0;
  std::size_t unfinished = 0;
  double mean_turnaround = 0.0;
  double mean_queuing = 0.0;
  double mean_transfer = 0.0;
  double mean_execution = 0.0;
  double mean_utility = 0.0;
};

// Means over completed jobs, summed in job order.
inline JobStats job_stats(const Simulation& sim) {
  JobStats s;
  s.total = sim.jobs().size();
  for (std::size_t i = 0; i < sim.jobs().size(); ++i) {
    const auto& r = sim.jobs()[i];
    switch (r.status) {
      case JobStatus::done: {
        ++s.done;
        const auto c = time_components(r);
        s.mean_turnaround += c.total;
        s.mean_queuing += c.queuing;
        s.mean_transfer += c.transfer;
        s.mean_execution += c.execution;
        s.mean_utility += sim.utility(i);
        break;
      }
      case JobStatus::failed: ++s.failed; break;
      case JobStatus::denied: ++s.denied; break;
      default: ++s.unfinished; break;
    }
  }
  if (s.done > 0) {
    const double n = static_cast<double>(s.done);
    s.mean_turnaround /= n;
    s.mean_queuing /= n;
    s.mean_transfer /= n;
    s.mean_execution /= n;
    s.mean_utility /= n;
  }
  return s;
}

inline ordered_json bills_json(const Accounting& acc) {
  ordered_json out = ordered_json::array();
  for (auto period : acc.periods_with_usage()) {
    for (const auto& b : acc.bill_report(period)) {
      ordered_json j;
      j["subject"] = b.subject;
      j["period"] = b.period;
      j["jobs"] = b.jobs;
      j["cpu_seconds"] = b.usage.cpu_seconds;
      j["bytes"] = b.usage.bytes;
      j["storage_byte_seconds"] = b.usage.storage_byte_seconds;
      j["wall_seconds"] = b.wall_seconds;
      j["total"] = b.total;
      out.push_back(std::move(j));
    }
  }
  return out;
}

inline ordered_json summarize(const Simulation& sim, const std::string& name) {
  ordered_json rep;
  rep["scenario"] = name;
  rep["seed"] = sim.config().seed;
  rep["duration"] = sim.config().duration;
  const auto st = job_stats(sim);
  rep["jobs"] = {{"total", st.total},       {"done", st.done},
                 {"failed", st.failed},     {"denied", st.denied},
                 {"unfinished", st.unfinished}};
  rep["mean_turnaround"] = st.mean_turnaround;
  rep["mean_queuing"] = st.mean_queuing;
  rep["mean_transfer"] = st.mean_transfer;
  rep["mean_execution"] = st.mean_execution;
  rep["mean_utility"] = st.mean_utility;
  if (auto eq = sim.equilibrium()) {
    ordered_json e;
    e["verdict"] = std::string(to_string(eq->verdict));
    e["cv"] = eq->cv;
    e["drift"] = eq->drift;
    e["subsystems"] = eq->ids;
    e["mean_flow"] = eq->mean_flow;
    rep["equilibrium"] = std::move(e);
  } else {
    rep["equilibrium"] = nullptr;
  }
  ordered_json alerts = ordered_json::array();
  for (const auto& a : sim.alerts())
    alerts.push_back({{"window", a.window}, {"t0", a.t0}, {"t1", a.t1},
                      {"entropy", a.entropy}, {"baseline", a.baseline}});
  rep["alerts"] = std::move(alerts);
  rep["bills"] = bills_json(sim.accounting());
  std::map<std::string, std::pair<double, std::size_t>> by_vo;
  for (const auto& u : sim.accounting().records()) {
    by_vo[u.vo].first += charge(u, sim.accounting().config().prices);
    by_vo[u.vo].second += u.status == "done" ? 1 : 0;
  }
  ordered_json vos = ordered_json::object();
  for (const auto& [vo, v] : by_vo) vos[vo] = {{"billed", v.first}, {"completed", v.second}};
  rep["per_vo"] = std::move(vos);
  if (auto rl = sim.rl_outcome()) {
    ordered_json r;
    r["episodes"] = rl->reward_curve.size();
    r["reward_curve"] = rl->reward_curve;
    r["greedy_policy"] = rl->table.policy();
    r["actions_taken"] = rl->actions_taken;
    rep["rl"] = std::move(r);
  }
  rep["oracle_evaluations"] = sim.oracle_evaluations();
  return rep;
}

inline std::string metrics_csv(const Simulation& sim) {
  const auto& mc = sim.config().metrics;
  std::string out = "t0,t1,shannon";
  for (double q : mc.renyi_orders) out += ",renyi_" + fmt(q);
  for (const auto& id : mc.subsystems) out += ",flow_" + id;
  out += ",completed,utility_mean\n";
  for (const auto& s : sim.snapshots()) {
    out += fmt(s.t0) + "," + fmt(s.t1) + "," + fmt(s.shannon);
    for (const auto& [_, h] : s.renyi) out += "," + fmt(h);
    for (double f : s.flow) out += "," + fmt(f);
    out += "," + std::to_string(s.completed) + "," + fmt(s.utility_mean) + "\n";
  }
  return out;
}

inline std::string usage_ndjson(const Accounting& acc) {
  std::string out;
  for (const auto& u : acc.records()) {
    ordered_json j;
    j["job"] = u.job;
    j["user"] = u.user;
    j["vo"] = u.vo;
    j["status"] = u.status;
    j["period"] = u.period;
    j["cpu_seconds"] = u.cpu_seconds;
    j["bytes_in"] = u.bytes_in;
    j["bytes_out"] = u.bytes_out;
    j["storage_byte_seconds"] = u.storage_byte_seconds;
    j["wall_seconds"] = u.wall_seconds;
    j["utility"] = u.utility;
    j["charge"] = charge(u, acc.config().prices);
    out += j.dump() + "\n";
  }
  return out;
}

inline std::string scenario_name(const Scenario& sc) {
  if (sc.document.contains("name") && sc.document["name"].is_string())
    return sc.document["name"].get<std::string>();
  return "scenario";
}

// --- single run ----------------------------------------------------------------

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  std::optional<std::filesystem::path> out_dir;  // unset: nothing written
  bool verify_invariants = false;
};

inline RunOutcome run_scenario(const Scenario& sc, const RunOptions& opt = {}) {
  RunOutcome res;
  auto cfg = sc.materialize(opt.seed, opt.duration);
  cfg.verify_invariants = opt.verify_invariants;
  if (!opt.out_dir) cfg.trace = false;
  Simulation sim(std::move(cfg));
  try {
    sim.run();
  } catch (const Error& e) {
    res.ok = false;
    res.error = e.what();
  }
  if (res.ok) {
    res.summary = summarize(sim, scenario_name(sc));
  } else {
    res.summary["scenario"] = scenario_name(sc);
    res.summary["seed"] = sim.config().seed;
    res.summary["error"] = res.error;
  }
  if (opt.out_dir) {
    std::filesystem::create_directories(*opt.out_dir);
    RunArtifacts a{*opt.out_dir / "trace.ndjson", *opt.out_dir / "metrics.csv",
                   *opt.out_dir / "usage.ndjson", *opt.out_dir / "report.json"};
    std::string trace;
    for (const auto& line : sim.trace()) trace += line + "\n";
    if (!res.ok) trace += ordered_json{{"error", res.error}, {"t", sim.now().seconds()}}.dump() + "\n";
    write_atomic(a.trace, trace);
    write_atomic(a.metrics, metrics_csv(sim));
    write_atomic(a.usage, usage_ndjson(sim.accounting()));
    write_atomic(a.report, res.summary.dump(2) + "\n");
    res.artifacts = a;
  }
  return res;
}

// --- sweeps --------------------------------------------------------------------

struct SweepParameter {
  std::string path;  // JSON pointer into the scenario document
  std::vector<json> values;
};

struct SweepGrid {
  std::vector<SweepParameter> parameters;
  std::vector<std::uint64_t> seeds;

  std::size_t points() const {
    std::size_t n = 1;
    for (const auto& p : parameters) n *= p.values.size();
    return n;
  }

  // Parameter values of grid point `k`; the last parameter varies fastest.
  std::vector<json> point(std::size_t k) const {
    std::vector<json> v(parameters.size());
    for (std::size_t i = parameters.size(); i-- > 0;) {
      v[i] = parameters[i].values[k % parameters[i].values.size()];
      k /= parameters[i].values.size();
    }
    return v;
  }
};

inline SweepGrid parse_grid(const json& doc) {
  std::vector<std::string> errs;
  SweepGrid g;
  if (!doc.is_object()) throw ValidationError({"/: sweep grid must be an object"});
  const auto params = doc.value("parameters", json::array());
  if (!params.is_array() || params.empty()) errs.push_back("/parameters: nonempty array expected");
  for (std::size_t i = 0; params.is_array() && i < params.size(); ++i) {
    const auto p = "/parameters/" + std::to_string(i);
    SweepParameter sp;
    if (!params[i].contains("path") || !params[i]["path"].is_string()) {
      errs.push_back(p + "/path: missing JSON pointer");
    } else {
      sp.path = params[i]["path"].get<std::string>();
      try {
        (void)json::json_pointer(sp.path);
      } catch (const json::exception& e) {
        errs.push_back(p + "/path: " + e.what());
      }
    }
    if (!params[i].contains("values") || !params[i]["values"].is_array() ||
        params[i]["values"].empty())
      errs.push_back(p + "/values: nonempty array expected");
    else
      for (const auto& v : params[i]["values"]) sp.values.push_back(v);
    g.parameters.push_back(std::move(sp));
  }
  const auto seeds = doc.value("seeds", json::array({1}));
  if (!seeds.is_array() || seeds.empty()) errs.push_back("/seeds: nonempty array expected");
  for (const auto& s : seeds) {
    if (!s.is_number_integer() || s.get<std::int64_t>() < 0) {
      errs.push_back("/seeds: seeds must be nonnegative integers");
      break;
    }
    g.seeds.push_back(s.get<std::uint64_t>());
  }
  if (!errs.empty()) throw ValidationError(std::move(errs));
  return g;
}

inline SweepGrid load_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError({path.string() + ": cannot open grid file"});
  try {
    return parse_grid(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ValidationError({path.string() + ": " + e.what()});
  }
}

struct SweepRow {
  std::size_t point = 0;
  std::vector<json> values;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  JobStats stats;
  double shannon_mean = 0.0;
  std::string verdict = "n/a";
  std::size_t alerts = 0;
  double billed = 0.0;
};

struct SweepResult {
  std::vector<std::string> parameter_paths;
  std::vector<SweepRow> rows;  // ordered by (point, seed index)
};

inline SweepRow sweep_one(const Scenario& base, const SweepGrid& grid, std::size_t point,
                          std::uint64_t seed) {
  SweepRow row;
  row.point = point;
  row.values = grid.point(point);
  row.seed = seed;
  try {
    json doc = base.document;
    for (std::size_t i = 0; i < grid.parameters.size(); ++i)
      doc[json::json_pointer(grid.parameters[i].path)] = row.values[i];
    const auto sc = parse_scenario(doc, base.base_dir);
    auto cfg = sc.materialize(seed);
    cfg.trace = false;
    Simulation sim(std::move(cfg));
    sim.run();
    row.stats = job_stats(sim);
    double h = 0.0;
    for (const auto& s : sim.snapshots()) h += s.shannon;
    if (!sim.snapshots().empty()) row.shannon_mean = h / static_cast<double>(sim.snapshots().size());
    if (auto eq = sim.equilibrium()) row.verdict = std::string(to_string(eq->verdict));
    row.alerts = sim.alerts().size();
    for (const auto& u : sim.accounting().records())
      row.billed += charge(u, sim.accounting().config().prices);
  } catch (const std::exception& e) {
    row.ok = false;
    row.error = e.what();
  }
  return row;
}

// Rows land in fixed slots keyed by (point, seed), so the worker count does
// not change the result.
inline SweepResult sweep(const Scenario& base, const SweepGrid& grid, unsigned workers = 1) {
  SweepResult res;
  for (const auto& p : grid.parameters) res.parameter_paths.push_back(p.path);
  const std::size_t n = grid.points() * grid.seeds.size();
  res.rows.resize(n);
  auto task = [&](std::size_t k) {
    res.rows[k] = sweep_one(base, grid, k / grid.seeds.size(), grid.seeds[k % grid.seeds.size()]);
  };
  workers = std::max(1u, workers);
  if (workers == 1) {
    for (std::size_t k = 0; k < n; ++k) task(k);
    return res;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < n; k = next++) task(k);
    });
  for (auto& t : pool) t.join();
  return res;
}

inline std::string sweep_csv(const SweepResult& r) {
  std::string out = "point";
  for (const auto& p : r.parameter_paths) out += "," + p;
  out += ",seed,status,jobs,done,failed,denied,mean_turnaround,mean_utility,shannon_mean,verdict,alerts,billed\n";
  for (const auto& row : r.rows) {
    out += std::to_string(row.point);
    for (const auto& v : row.values) out += "," + v.dump();
    out += "," + std::to_string(row.seed) + "," + (row.ok ? "ok" : "failed");
    out += "," + std::to_string(row.stats.total) + "," + std::to_string(row.stats.done) + "," +
           std::to_string(row.stats.failed) + "," + std::to_string(row.stats.denied);
    out += "," + fmt(row.stats.mean_turnaround) + "," + fmt(row.stats.mean_utility) + "," +
           fmt(row.shannon_mean) + "," + row.verdict + "," + std::to_string(row.alerts) + "," +
           fmt(row.billed) + "\n";
  }
  return out;
}

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single run
};

inline Aggregate aggregate(const std::vector<double>& xs) {
  Aggregate a;
  if (xs.empty()) return a;
  for (double x : xs) a.mean += x;
  a.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - a.mean) * (x - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return a;
}

// Mean and standard deviation per grid point over the successful runs.
inline std::string sweep_summary_csv(const SweepResult& r) {
  std::string out = "point";
  for (const auto& p : r.parameter_paths) out += "," + p;
  out += ",runs,failed_runs,turnaround_mean,turnaround_sd,utility_mean,utility_sd,shannon_mean,shannon_sd,billed_mean,billed_sd,verdicts\n";
  std::map<std::size_t, std::vector<const SweepRow*>> by_point;
  for (const auto& row : r.rows) by_point[row.point].push_back(&row);
  for (const auto& [point, rows] : by_point) {
    std::vector<double> ta, ut, sh, bi;
    std::map<std::string, int> verdicts;
    std::size_t failed = 0;
    for (const auto* row : rows) {
      if (!row->ok) {
        ++failed;
        continue;
      }
      ta.push_back(row->stats.mean_turnaround);
      ut.push_back(row->stats.mean_utility);
      sh.push_back(row->shannon_mean);
      bi.push_back(row->billed);
      ++verdicts[row->verdict];
    }
    out += std::to_string(point);
    for (const auto& v : rows.front()->values) out += "," + v.dump();
    out += "," + std::to_string(rows.size()) + "," + std::to_string(failed);
    for (const auto& xs : {ta, ut, sh, bi}) {
      const auto a = aggregate(xs);
      out += "," + fmt(a.mean) + "," + fmt(a.stddev);
    }
    std::string vs;
    for (const auto& [v, n] : verdicts) vs += (vs.empty() ? "" : " ") + v + ":" + std::to_string(n);
    out += "," + vs + "\n";
  }
  return out;
}

// --- broker tuning -----------------------------------------------------------------

struct TuneCandidate {
  double queue = 1.0;
  double transfer = 1.0;
  double execution = 1.0;
};

struct TuneRow {
  TuneCandidate weights;
  std::vector<double> per_seed;  // mean turnaround of each run
  double objective = 0.0;        // mean over seeds
  bool ok = true;
};

struct TuneResult {
  std::vector<std::uint64_t> seeds;
  std::vector<TuneRow> table;
  std::size_t best = 0;
};

// Grid file: {"queue": [...], "transfer": [...], "execution": [...], "seeds": [...]}
// expands to the Cartesian product in that nesting order, or
// {"candidates": [{"queue":..., ...}], "seeds": [...]}.
inline std::pair<std::vector<TuneCandidate>, std::vector<std::uint64_t>> parse_tune_grid(const json& doc) {
  std::vector<std::string> errs;
  std::vector<TuneCandidate> cands;
  std::vector<std::uint64_t> seeds;
  auto nonneg_list = [&](const char* key) {
    std::vector<double> v{1.0};
    if (!doc.contains(key)) return v;
    if (!doc[key].is_array() || doc[key].empty()) {
      errs.push_back(std::string("/") + key + ": nonempty array expected");
      return v;
    }
    v.clear();
    for (const auto& x : doc[key]) {
      if (!x.is_number() || x.get<double>() < 0.0)
        errs.push_back(std::string("/") + key + ": weights must be numbers >= 0");
      else
        v.push_back(x.get<double>());
    }
    return v;
  };
  if (!doc.is_object()) throw ValidationError({"/: tuning grid must be an object"});
  if (doc.contains("candidates")) {
    const auto& cs = doc["candidates"];
    if (!cs.is_array() || cs.empty()) errs.push_back("/candidates: nonempty array expected");
    for (std::size_t i = 0; cs.is_array() && i < cs.size(); ++i) {
      TuneCandidate c;
      try {
        c.queue = cs[i].value("queue", 1.0);
        c.transfer = cs[i].value("transfer", 1.0);
        c.execution = cs[i].value("execution", 1.0);
      } catch (const json::exception&) {
        errs.push_back("/candidates/" + std::to_string(i) + ": weights must be numbers");
      }
      if (c.queue < 0 || c.transfer < 0 || c.execution < 0)
        errs.push_back("/candidates/" + std::to_string(i) + ": weights must be >= 0");
      cands.push_back(c);
    }
  } else {
    for (double q : nonneg_list("queue"))
      for (double t : nonneg_list("transfer"))
        for (double x : nonneg_list("execution")) cands.push_back({q, t, x});
  }
  const auto s = doc.value("seeds", json::array({1}));
  if (!s.is_array() || s.empty()) errs.push_back("/seeds: nonempty array expected");
  for (const auto& x : s) {
    if (!x.is_number_integer() || x.get<std::int64_t>() < 0) {
      errs.push_back("/seeds: seeds must be nonnegative integers");
      break;
    }
    seeds.push_back(x.get<std::uint64_t>());
  }
  if (!errs.empty()) throw ValidationError(std::move(errs));
  return {cands, seeds};
}

// Runs every candidate on every seed with the free-choice broker and picks
// the smallest mean turnaround; ties go to the earlier candidate.
inline TuneResult tune_broker(const Scenario& sc, const std::vector<TuneCandidate>& candidates,
                              const std::vector<std::uint64_t>& seeds, unsigned workers = 1) {
  if (candidates.empty()) throw ConfigError("tuning grid is empty");
  if (seeds.empty()) throw ConfigError("tuning needs at least one seed");
  TuneResult res;
  res.seeds = seeds;
  res.table.resize(candidates.size());
  const std::size_t n = candidates.size() * seeds.size();
  std::vector<double> values(n, 0.0);
  std::vector<char> ok(n, 1);
  auto task = [&](std::size_t k) {
    const auto& c = candidates[k / seeds.size()];
    try {
      auto cfg = sc.materialize(seeds[k % seeds.size()]);
      cfg.trace = false;
      cfg.policy.mode = MatchMode::free_choice;
      cfg.policy.w_queue = c.queue;
      cfg.policy.w_transfer = c.transfer;
      cfg.policy.w_execution = c.execution;
      Simulation sim(std::move(cfg));
      sim.run();
      values[k] = job_stats(sim).mean_turnaround;
    } catch (const Error&) {
      ok[k] = 0;
    }
  };
  workers = std::max(1u, workers);
  if (workers == 1) {
    for (std::size_t k = 0; k < n; ++k) task(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < n; k = next++) task(k);
      });
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto& row = res.table[i];
    row.weights = candidates[i];
    double sum = 0.0;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const auto k = i * seeds.size() + s;
      row.per_seed.push_back(values[k]);
      row.ok = row.ok && ok[k];
      sum += values[k];
    }
    row.objective = row.ok ? sum / static_cast<double>(seeds.size())
                           : std::numeric_limits<double>::infinity();
  }
  for (std::size_t i = 1; i < res.table.size(); ++i)
    if (res.table[i].objective < res.table[res.best].objective) res.best = i;
  return res;
}

inline std::string tune_csv(const TuneResult& r) {
  std::string out = "candidate,w_queue,w_transfer,w_execution,objective,best";
  for (auto s : r.seeds) out += ",seed_" + std::to_string(s);
  out += "\n";
  for (std::size_t i = 0; i < r.table.size(); ++i) {
    const auto& row = r.table[i];
    out += std::to_string(i) + "," + fmt(row.weights.queue) + "," + fmt(row.weights.transfer) + "," +
           fmt(row.weights.execution) + "," + fmt(row.objective) + "," + (i == r.best ? "1" : "0");
    for (double v : row.per_seed) out += "," + fmt(v);
    out += "\n";
  }
  return out;
}

inline std::string minority_csv(const std::vector<MinorityStudyRow>& rows) {
  std::string out = "memory,alpha,variance,variance_per_agent\n";
  for (const auto& r : rows)
    out += std::to_string(r.memory) + "," + fmt(r.alpha) + "," + fmt(r.variance) + "," +
           fmt(r.variance_per_agent) + "\n";
  return out;
}

}  // namespace gridsim

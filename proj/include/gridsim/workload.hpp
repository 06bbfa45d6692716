#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gridsim/error.hpp"
#include "gridsim/grid_model.hpp"
#include "gridsim/rng.hpp"
#include "gridsim/sim_core.hpp"

namespace gridsim {

enum class JobClass { standard, data_intensive, parallel_cluster, pipeline_stage, data_producer };

inline constexpr std::array<JobClass, 5> kJobClasses = {
    JobClass::standard, JobClass::data_intensive, JobClass::parallel_cluster,
    JobClass::pipeline_stage, JobClass::data_producer};

constexpr std::string_view to_string(JobClass c) {
  switch (c) {
    case JobClass::standard: return "standard";
    case JobClass::data_intensive: return "data-intensive";
    case JobClass::parallel_cluster: return "parallel-cluster";
    case JobClass::pipeline_stage: return "pipeline-stage";
    case JobClass::data_producer: return "data-producer";
  }
  return "standard";
}

inline std::optional<JobClass> parse_job_class(std::string_view s) {
  for (auto c : kJobClasses)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

// Resources fixed by the submitter (JDL-style). A pinned CE leaves the
// broker no freedom in constrained mode.
struct Pinning {
  std::optional<std::string> ce;
  std::map<std::string, std::string> se_for_dataset;

  bool empty() const { return !ce && se_for_dataset.empty(); }
};

struct ReservationWindow {
  double start = 0.0;
  double end = 0.0;
};

struct JobSpec {
  std::string id;
  std::string user;
  std::string vo;
  JobClass job_class = JobClass::standard;
  double cpu = 0.0;  // normalized operations
  int required_cpus = 1;
  std::vector<std::string> inputs;
  Bytes output_bytes = 0;
  int min_replicas = 1;
  Pinning pin;
  std::vector<std::string> deps;
  std::string ui;
  std::string queue;  // empty: the CE's first queue
  std::optional<ReservationWindow> reservation;
};

enum class JobStatus { pending, matched, queued, transferring, running, done, failed, denied };

constexpr std::string_view to_string(JobStatus s) {
  switch (s) {
    case JobStatus::pending: return "pending";
    case JobStatus::matched: return "matched";
    case JobStatus::queued: return "queued";
    case JobStatus::transferring: return "transferring";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
    case JobStatus::denied: return "denied";
  }
  return "pending";
}

constexpr bool is_terminal(JobStatus s) {
  return s == JobStatus::done || s == JobStatus::failed || s == JobStatus::denied;
}

struct JobTimestamps {
  std::optional<SimTime> submit;
  std::optional<SimTime> broker_accept;
  std::optional<SimTime> match;
  std::optional<SimTime> queue_enter;
  std::optional<SimTime> queue_leave;
  std::optional<SimTime> transfer_start;
  std::optional<SimTime> transfer_end;
  std::optional<SimTime> exec_start;
  std::optional<SimTime> exec_end;

  bool complete() const {
    return submit && broker_accept && match && queue_enter && queue_leave && transfer_start &&
           transfer_end && exec_start && exec_end;
  }
};

struct JobRecord {
  JobSpec spec;
  JobTimestamps ts;
  JobStatus status = JobStatus::pending;
  std::string ce;
  std::vector<int> nodes;
  double node_wait = 0.0;  // data producers: wait for a free node, kept out of queue time
  Bytes staged_bytes = 0;
  std::string reason;  // failure or denial reason
};

struct TimeComponents {
  double queuing = 0.0;
  double transfer = 0.0;
  double execution = 0.0;
  double total = 0.0;
};

inline TimeComponents time_components(const JobRecord& r) {
  if (r.status != JobStatus::done || !r.ts.complete())
    throw DomainError("job '" + r.spec.id + "' has no complete timeline");
  TimeComponents c;
  c.queuing = *r.ts.queue_leave - *r.ts.queue_enter;
  c.transfer = *r.ts.transfer_end - *r.ts.transfer_start;
  c.execution = *r.ts.exec_end - *r.ts.exec_start;
  c.total = *r.ts.exec_end - *r.ts.submit;
  if (c.queuing < 0 || c.transfer < 0 || c.execution < 0 || c.total < 0)
    throw DomainError("job '" + r.spec.id + "' has an inconsistent timeline");
  return c;
}

// Empirical distribution as weighted bins; lo == hi is a point mass.
// Sampling inverts the cumulative mass, uniform inside ranged bins.
class Histogram {
 public:
  struct Bin {
    double lo = 0.0;
    double hi = 0.0;
    double mass = 0.0;
  };

  Histogram() = default;
  explicit Histogram(std::vector<Bin> bins) : bins_(std::move(bins)) {
    if (bins_.empty()) throw FitError("histogram needs at least one bin");
    double total = 0.0;
    for (const auto& b : bins_) {
      if (!(b.mass >= 0.0) || !(b.hi >= b.lo)) throw FitError("malformed histogram bin");
      total += b.mass;
    }
    if (!(total > 0.0)) throw FitError("histogram has no mass");
    cumulative_.reserve(bins_.size());
    double acc = 0.0;
    for (auto& b : bins_) {
      b.mass /= total;
      acc += b.mass;
      cumulative_.push_back(acc);
    }
  }

  static Histogram point(double v) { return Histogram({Bin{v, v, 1.0}}); }

  // Atom at every distinct observed value, mass proportional to its count.
  static Histogram from_samples(std::vector<double> values) {
    if (values.empty()) throw FitError("no observations to fit");
    std::sort(values.begin(), values.end());
    std::vector<Bin> bins;
    for (double v : values) {
      if (!bins.empty() && bins.back().lo == v)
        bins.back().mass += 1.0;
      else
        bins.push_back(Bin{v, v, 1.0});
    }
    return Histogram(std::move(bins));
  }

  bool empty() const { return bins_.empty(); }
  const std::vector<Bin>& bins() const { return bins_; }

  double sample(RngStream& rng) const {
    const double u = rng.uniform();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    const auto idx = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()),
                                           bins_.size() - 1);
    const auto& b = bins_[idx];
    if (b.lo == b.hi) return b.lo;
    return rng.uniform(b.lo, b.hi);
  }

  double mean() const {
    double m = 0.0;
    for (const auto& b : bins_) m += b.mass * 0.5 * (b.lo + b.hi);
    return m;
  }

 private:
  std::vector<Bin> bins_;
  std::vector<double> cumulative_;
};

struct ApplicationProfile {
  std::map<JobClass, double> mix;  // sums to 1
  Histogram cpu;
  Histogram input_bytes;
  Histogram output_bytes;
  Histogram interarrival;
  Histogram chain_length = Histogram::point(3.0);

  JobClass sample_class(RngStream& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    JobClass last = JobClass::standard;
    for (const auto& [c, w] : mix) {
      if (w <= 0.0) continue;
      acc += w;
      last = c;
      if (u < acc) return c;
    }
    return last;
  }
};

// One observed job from a real application run.
struct Observation {
  JobClass job_class = JobClass::standard;
  double cpu = 0.0;
  double in_bytes = 0.0;
  double out_bytes = 0.0;
  double interarrival = 0.0;
};

inline constexpr std::string_view kMeasurementHeader = "class,cpu,in_bytes,out_bytes,interarrival";

// Reads the comma-separated measurement table (header row required).
inline std::vector<Observation> read_measurements(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FitError("measurement table is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMeasurementHeader)
    throw FitError("measurement header must be '" + std::string(kMeasurementHeader) + "'");
  std::vector<Observation> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5)
      throw FitError("line " + std::to_string(lineno) + ": expected 5 columns");
    auto cls = parse_job_class(cells[0]);
    if (!cls) throw FitError("line " + std::to_string(lineno) + ": unknown class '" + cells[0] + "'");
    Observation o;
    o.job_class = *cls;
    try {
      o.cpu = std::stod(cells[1]);
      o.in_bytes = std::stod(cells[2]);
      o.out_bytes = std::stod(cells[3]);
      o.interarrival = std::stod(cells[4]);
    } catch (const std::exception&) {
      throw FitError("line " + std::to_string(lineno) + ": non-numeric field");
    }
    rows.push_back(o);
  }
  return rows;
}

// Pipeline chain lengths come from maximal runs of consecutive
// pipeline-stage rows.
inline ApplicationProfile fit_profile(const std::vector<Observation>& rows) {
  if (rows.empty()) throw FitError("cannot fit a profile from zero observations");
  std::vector<double> cpu, in, out, gap, chains;
  std::map<JobClass, double> counts;
  double run = 0.0;
  for (const auto& o : rows) {
    for (double v : {o.cpu, o.in_bytes, o.out_bytes, o.interarrival})
      if (!std::isfinite(v) || v < 0.0) throw FitError("observation has a negative or non-finite value");
    cpu.push_back(o.cpu);
    in.push_back(o.in_bytes);
    out.push_back(o.out_bytes);
    gap.push_back(o.interarrival);
    counts[o.job_class] += 1.0;
    if (o.job_class == JobClass::pipeline_stage) {
      run += 1.0;
    } else if (run > 0.0) {
      chains.push_back(run);
      run = 0.0;
    }
  }
  if (run > 0.0) chains.push_back(run);

  ApplicationProfile p;
  for (const auto& [c, n] : counts) p.mix[c] = n / static_cast<double>(rows.size());
  p.cpu = Histogram::from_samples(std::move(cpu));
  p.input_bytes = Histogram::from_samples(std::move(in));
  p.output_bytes = Histogram::from_samples(std::move(out));
  p.interarrival = Histogram::from_samples(std::move(gap));
  if (!chains.empty()) p.chain_length = Histogram::from_samples(std::move(chains));
  return p;
}

struct TimedJob {
  SimTime at;
  JobSpec spec;
};

struct SubmitterShare {
  std::string user;
  std::string vo;
  double weight = 1.0;
};

struct DatasetRef {
  std::string id;
  Bytes size = 0;
};

// Grid-side facts the generator needs to emit valid job specs.
struct GeneratorContext {
  std::string id_prefix = "j";
  std::vector<SubmitterShare> submitters{{"user", "vo", 1.0}};
  std::vector<std::string> uis;
  std::vector<DatasetRef> datasets;  // pool for input selection
  std::vector<int> parallel_cpus{2};
  std::map<std::string, double> pin_weights;  // empty: jobs are left free
  std::optional<std::string> producer_ce;
  double reservation_fraction = 0.0;
  double reservation_lead = 600.0;
  double reservation_slack = 2.0;
  double producer_cpu_scale = 1.0;
};

// Arrival intensity in jobs per second as a function of time.
using RateFunction = std::function<double(double)>;

namespace detail {

template <typename T, typename W>
const T& weighted_pick(const std::vector<T>& items, W weight_of, RngStream& rng) {
  double total = 0.0;
  for (const auto& it : items) total += weight_of(it);
  double u = rng.uniform() * total;
  for (const auto& it : items) {
    u -= weight_of(it);
    if (u < 0.0) return it;
  }
  return items.back();
}

inline std::string pick_dataset(const std::vector<DatasetRef>& pool, double target) {
  const DatasetRef* best = &pool.front();
  for (const auto& d : pool) {
    const double gap = std::abs(static_cast<double>(d.size) - target);
    const double best_gap = std::abs(static_cast<double>(best->size) - target);
    if (gap < best_gap || (gap == best_gap && d.id < best->id)) best = &d;
  }
  return best->id;
}

}  // namespace detail

// Non-homogeneous Poisson arrivals by thinning against max_rate. Every
// arrival draws its attributes from its own substream, so the job list is a
// pure function of the inputs.
inline std::vector<TimedJob> generate(const ApplicationProfile& profile, double start,
                                      double duration, const RateFunction& rate, double max_rate,
                                      std::uint64_t seed, const GeneratorContext& ctx) {
  std::vector<TimedJob> jobs;
  if (!(max_rate > 0.0) || !(duration > 0.0)) return jobs;
  RngStream arrivals(seed, ctx.id_prefix + "/arrivals");
  std::size_t arrival = 0;
  std::size_t serial = 0;
  double t = start;
  const double end = start + duration;
  while (true) {
    t += arrivals.exponential(max_rate);
    if (t >= end) break;
    if (arrivals.uniform() * max_rate >= rate(t)) continue;
    RngStream rng(seed, ctx.id_prefix + "/job/" + std::to_string(arrival++));
    const auto cls = profile.sample_class(rng);
    const auto& who = detail::weighted_pick(ctx.submitters,
                                            [](const SubmitterShare& s) { return s.weight; }, rng);
    std::optional<std::string> pinned_ce;
    if (!ctx.pin_weights.empty()) {
      std::vector<std::pair<std::string, double>> pins(ctx.pin_weights.begin(),
                                                       ctx.pin_weights.end());
      pinned_ce = detail::weighted_pick(pins, [](const auto& p) { return p.second; }, rng).first;
    }
    const std::string ui = ctx.uis.empty() ? std::string() : ctx.uis[rng.below(ctx.uis.size())];

    auto base = [&](JobClass c) {
      JobSpec s;
      s.id = ctx.id_prefix + std::to_string(serial++);
      s.user = who.user;
      s.vo = who.vo;
      s.job_class = c;
      s.cpu = profile.cpu.sample(rng);
      s.output_bytes = static_cast<Bytes>(std::llround(profile.output_bytes.sample(rng)));
      s.ui = ui;
      if (pinned_ce) s.pin.ce = pinned_ce;
      return s;
    };
    auto with_input = [&](JobSpec& s) {
      if (ctx.datasets.empty()) return;
      s.inputs.push_back(detail::pick_dataset(ctx.datasets, profile.input_bytes.sample(rng)));
    };

    if (cls == JobClass::pipeline_stage) {
      const int length = std::max(1, static_cast<int>(std::lround(profile.chain_length.sample(rng))));
      std::string prev;
      for (int k = 0; k < length; ++k) {
        JobSpec s = base(cls);
        if (k == 0) {
          with_input(s);
        } else {
          s.deps.push_back(prev);
          s.inputs.push_back(prev + ".out");
        }
        if (k + 1 < length && s.output_bytes == 0) s.output_bytes = 1;
        prev = s.id;
        jobs.push_back({SimTime(t), std::move(s)});
      }
      continue;
    }
    JobSpec s = base(cls);
    switch (cls) {
      case JobClass::data_intensive: with_input(s); break;
      case JobClass::parallel_cluster:
        s.required_cpus = ctx.parallel_cpus[rng.below(ctx.parallel_cpus.size())];
        break;
      case JobClass::data_producer:
        s.cpu *= ctx.producer_cpu_scale;
        if (ctx.producer_ce) s.pin.ce = ctx.producer_ce;
        break;
      default: break;
    }
    if (cls == JobClass::standard && ctx.reservation_fraction > 0.0 &&
        rng.bernoulli(ctx.reservation_fraction)) {
      const double begin = t + ctx.reservation_lead;
      s.reservation = ReservationWindow{begin, begin + ctx.reservation_slack * s.cpu};
    }
    jobs.push_back({SimTime(t), std::move(s)});
  }
  return jobs;
}

// Homogeneous Poisson arrivals at `rate` jobs per second over [0, duration).
inline std::vector<TimedJob> generate(const ApplicationProfile& profile, double duration,
                                      double rate, std::uint64_t seed,
                                      const GeneratorContext& ctx = {}) {
  if (!(rate > 0.0)) return {};
  return generate(profile, 0.0, duration, [rate](double) { return rate; }, rate, seed, ctx);
}

// Kahn's algorithm over the batch; false on a cycle or unknown predecessor
// inside the batch.
inline bool dependencies_acyclic(const std::vector<JobSpec>& jobs) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < jobs.size(); ++i) index[jobs[i].id] = i;
  std::vector<int> indegree(jobs.size(), 0);
  std::vector<std::vector<std::size_t>> out(jobs.size());
  for (std::size_t i = 0; i < jobs.size(); ++i)
    for (const auto& d : jobs[i].deps) {
      auto it = index.find(d);
      if (it == index.end()) return false;
      out[it->second].push_back(i);
      ++indegree[i];
    }
  std::vector<std::size_t> ready;
  for (std::size_t i = 0; i < jobs.size(); ++i)
    if (indegree[i] == 0) ready.push_back(i);
  std::size_t seen = 0;
  while (!ready.empty()) {
    auto i = ready.back();
    ready.pop_back();
    ++seen;
    for (auto j : out[i])
      if (--indegree[j] == 0) ready.push_back(j);
  }
  return seen == jobs.size();
}

}  // namespace gridsim

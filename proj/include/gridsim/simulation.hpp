#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridsim/accounting.hpp"
#include "gridsim/broker.hpp"
#include "gridsim/error.hpp"
#include "gridsim/grid_model.hpp"
#include "gridsim/metrics.hpp"
#include "gridsim/optimizer.hpp"
#include "gridsim/rng.hpp"
#include "gridsim/sim_core.hpp"
#include "gridsim/workload.hpp"

namespace gridsim {

struct MetricConfig {
  double window = 600.0;
  std::vector<std::string> subsystems;  // CE, SE or link ids; empty means every CE
  std::vector<double> renyi_orders{0.0, 0.5, 2.0, 5.0};
  EquilibriumThresholds thresholds;
  CollectiveFlowConfig flow;
};

struct SimulationConfig {
  GridTopology topology;
  std::vector<TimedJob> jobs;
  MatchPolicy policy;
  UtilityWeights utility;
  MetricConfig metrics;
  AccountingConfig accounting;
  std::optional<GridRLSettings> rl;
  std::uint64_t seed = 1;
  double duration = 3600.0;
  bool verify_invariants = false;
  bool trace = true;
};

struct Transfer {
  std::size_t job = kNoJob;
  std::string dataset;
  std::string se;
  std::string ce;
  std::vector<std::string> links;
  Bytes size = 0;
  SimTime start;
  SimTime end;
  double rate = 0.0;  // bytes / second averaged over [start, end)
  bool active = false;
};

struct RlOutcome {
  QTable table;
  std::vector<double> reward_curve;  // mean job utility per episode
  std::vector<std::string> actions_taken;
  std::vector<bool> applied;
  std::vector<std::size_t> states_seen;
};

inline double speed_factor(const ComputingElement& ce, const GridTopology& topo) {
  return ce.speed / topo.reference_speed;
}

// One Grid run. Owns all mutable state; copyable so the exhaustive oracle
// can evaluate candidate assignments on forks of the live state.
class Simulation {
 public:
  explicit Simulation(SimulationConfig cfg) : cfg_(std::move(cfg)), accounting_(cfg_.accounting) {
    if (!cfg_.policy.valid()) throw ConfigError("invalid broker policy weights");
    if (!cfg_.utility.valid()) throw ConfigError("invalid utility weights");
    if (!(cfg_.metrics.window > 0.0)) throw ConfigError("metric window must be positive");
    if (!(cfg_.duration >= 0.0) || !std::isfinite(cfg_.duration))
      throw ConfigError("duration must be a nonnegative number");
    if (cfg_.metrics.subsystems.empty())
      for (const auto& [id, _] : cfg_.topology.ces()) cfg_.metrics.subsystems.push_back(id);
    for (const auto& [id, ce] : cfg_.topology.ces()) ce_states_[id] = CeState(ce);
    for (const auto& [id, _] : cfg_.topology.links()) link_active_[id] = 0;

    std::stable_sort(cfg_.jobs.begin(), cfg_.jobs.end(),
                     [](const TimedJob& a, const TimedJob& b) { return a.at < b.at; });
    jobs_.reserve(cfg_.jobs.size());
    for (const auto& tj : cfg_.jobs) {
      if (index_.count(tj.spec.id)) throw ConfigError("duplicate job id '" + tj.spec.id + "'");
      index_[tj.spec.id] = jobs_.size();
      JobRecord r;
      r.spec = tj.spec;
      jobs_.push_back(std::move(r));
      submit_at_.push_back(tj.at);
    }
    dependents_.resize(jobs_.size());
    unmet_.assign(jobs_.size(), 0);
    stage_.assign(jobs_.size(), BrokerStage::intake);
    pending_transfers_.assign(jobs_.size(), 0);
    decisions_.resize(jobs_.size());
    utility_.assign(jobs_.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < jobs_.size(); ++i)
      for (const auto& d : jobs_[i].spec.deps) {
        auto it = index_.find(d);
        if (it == index_.end())
          throw ConfigError("job '" + jobs_[i].spec.id + "' depends on unknown job '" + d + "'");
        dependents_[it->second].push_back(i);
        ++unmet_[i];
      }
    if (cfg_.rl) {
      cfg_.rl->validate();
      rl_.emplace();
      rl_->settings = *cfg_.rl;
      rl_->outcome.table = QTable(rl_->settings.state_count(), rl_->settings.actions.size());
      rl_->rng = RngStream(cfg_.seed, "rl/grid");
      rl_->episodes = static_cast<std::size_t>(cfg_.duration / rl_->settings.episode_length);
    }
    if (cfg_.duration > 0.0) schedule_initial();
  }

  RunStats run() {
    if (finished_) throw IntegrityError("simulation already ran");
    auto stats = engine_.run_until(SimTime(cfg_.duration), [this](const Event& ev) { handle(ev); });
    advance_integrals();
    accounting_.finalize();
    finished_ = true;
    return stats;
  }

  // --- results -------------------------------------------------------------

  const SimulationConfig& config() const { return cfg_; }
  const GridTopology& topology() const { return cfg_.topology; }
  const std::vector<JobRecord>& jobs() const { return jobs_; }
  const JobRecord& job(const std::string& id) const { return jobs_.at(index_.at(id)); }
  const std::vector<std::string>& trace() const { return trace_; }
  const std::vector<MetricSnapshot>& snapshots() const { return snapshots_; }
  const Accounting& accounting() const { return accounting_; }
  const std::vector<Transfer>& transfers() const { return transfers_; }
  const std::map<std::string, CeState>& ce_states() const { return ce_states_; }
  double utility(std::size_t job) const { return utility_.at(job); }
  const std::optional<MatchDecision>& decision(std::size_t job) const { return decisions_.at(job); }
  const std::map<std::string, std::pair<std::uint64_t, std::vector<int>>>& reservations() const {
    return reservation_by_job_;
  }
  std::optional<RlOutcome> rl_outcome() const {
    if (!rl_) return std::nullopt;
    return rl_->outcome;
  }
  SimTime now() const { return engine_.now(); }
  std::size_t oracle_evaluations() const { return oracle_evaluations_; }

  std::vector<CollectiveFlowAlert> alerts() const {
    return detect_collective_flow(snapshots_, cfg_.metrics.flow);
  }

  std::optional<EquilibriumReport> equilibrium() const {
    if (snapshots_.size() < 4) return std::nullopt;
    try {
      return equipartition_test(snapshots_, cfg_.metrics.thresholds);
    } catch (const DomainError&) {
      return std::nullopt;
    }
  }

  // Violations of the run-wide invariants at the current event boundary.
  std::vector<std::string> check_invariants() const {
    std::vector<std::string> bad;
    if (!cfg_.topology.storage_conserved()) bad.push_back("storage conservation");
    for (const auto& [id, st] : ce_states_) {
      if (st.busy_nodes() + st.idle_nodes() != cfg_.topology.ce(id).nodes)
        bad.push_back("worker-node conservation on " + id);
      if (!st.reservations_disjoint()) bad.push_back("overlapping reservations on " + id);
    }
    for (const auto& q : cfg_.accounting.quotas) {
      const auto c = accounting_.consumed(q.subject);
      auto over = [](const std::optional<double>& cap, double v) {
        return cap && v > *cap * (1.0 + 1e-12) + 1e-9;
      };
      if (over(q.cpu_seconds, c.cpu_seconds) || over(q.bytes, c.bytes) || over(q.money, c.money))
        bad.push_back("quota exceeded for " + q.subject);
    }
    return bad;
  }

 private:
  struct RlRuntime {
    GridRLSettings settings;
    RlOutcome outcome;
    RngStream rng{0, ""};
    std::size_t episodes = 0;
    std::size_t episode = 0;
    std::size_t state = 0;
    std::size_t action = 0;
    double utility_sum = 0.0;
    std::size_t utility_count = 0;
    std::map<std::string, double> marks;
  };

  // --- setup -----------------------------------------------------------------

  void schedule_initial() {
    for (std::size_t i = 0; i < jobs_.size(); ++i) {
      if (!(submit_at_[i].seconds() < cfg_.duration)) continue;
      engine_.schedule(submit_at_[i], EventKind::job_submit, jobs_[i].spec.ui, i);
    }
    if (cfg_.metrics.window <= cfg_.duration)
      engine_.schedule(SimTime(cfg_.metrics.window), EventKind::metric_sample, "metrics");
    if (cfg_.accounting.period <= cfg_.duration)
      engine_.schedule(SimTime(cfg_.accounting.period), EventKind::quota_period, "accounting", kNoJob, 1);
    if (rl_) engine_.schedule(SimTime(0.0), EventKind::reconfigure, "optimizer");
  }

  // --- dispatch on event kind ------------------------------------------------

  void handle(const Event& ev) {
    advance_integrals();
    roll_due_periods();
    nlohmann::ordered_json detail;
    switch (ev.kind) {
      case EventKind::job_submit: on_submit(ev.job, detail); break;
      case EventKind::match_request: on_match(ev.job, detail); break;
      case EventKind::transfer_start: on_transfer_start(ev, detail); break;
      case EventKind::transfer_complete: on_transfer_complete(ev, detail); break;
      case EventKind::exec_start: on_exec_start(ev, detail); break;
      case EventKind::exec_complete: on_exec_complete(ev.job, detail); break;
      case EventKind::queue_poll: on_queue_poll(ev, detail); break;
      case EventKind::metric_sample: on_metric_sample(detail); break;
      case EventKind::reconfigure: on_reconfigure(detail); break;
      case EventKind::reservation_start: on_reservation_start(ev.job, detail); break;
      case EventKind::quota_period: on_quota_period(ev, detail); break;
    }
    if (cfg_.trace) emit(ev, detail);
    if (cfg_.verify_invariants) {
      auto bad = check_invariants();
      if (!bad.empty()) throw IntegrityError("invariant violated: " + bad.front());
    }
  }

  void emit(const Event& ev, nlohmann::ordered_json& detail) {
    nlohmann::ordered_json line;
    line["t"] = ev.time.seconds();
    line["seq"] = ev.seq;
    line["kind"] = to_string(ev.kind);
    line["target"] = ev.target;
    if (ev.job != kNoJob) line["job"] = jobs_[ev.job].spec.id;
    for (auto& [k, v] : detail.items()) line[k] = std::move(v);
    trace_.push_back(line.dump());
  }

  // --- intake ---------------------------------------------------------------

  Consumption projected_usage(const JobSpec& spec) const {
    UsageRecord u;
    u.cpu_seconds = spec.cpu / cfg_.topology.reference_speed;
    double bytes = static_cast<double>(spec.output_bytes);
    for (const auto& ds : spec.inputs) bytes += static_cast<double>(dataset_size(ds));
    u.bytes_in = bytes;
    return accounting_.project(u);
  }

  Bytes dataset_size(const std::string& ds) const {
    auto reps = cfg_.topology.replica_lookup(ds);
    if (!reps.empty()) return reps.front().size;
    if (ds.size() > 4 && ds.compare(ds.size() - 4, 4, ".out") == 0) {
      auto it = index_.find(ds.substr(0, ds.size() - 4));
      if (it != index_.end()) return jobs_[it->second].spec.output_bytes;
    }
    return 0;
  }

  void on_submit(std::size_t j, nlohmann::ordered_json& detail) {
    auto& rec = jobs_[j];
    rec.ts.submit = now();
    stage_[j] = BrokerStage::intake;
    for (const auto& d : rec.spec.deps) {
      const auto& pred = jobs_[index_.at(d)];
      if (pred.status == JobStatus::failed || pred.status == JobStatus::denied) {
        fail(j, "predecessor '" + d + "' did not complete");
        detail["status"] = "failed";
        detail["reason"] = rec.reason;
        return;
      }
    }
    const auto decision = accounting_.admit(rec.spec, projected_usage(rec.spec));
    if (!decision.allowed) {
      rec.status = JobStatus::denied;
      rec.reason = decision.reason;
      record_usage(j);
      detail["status"] = "denied";
      detail["reason"] = rec.reason;
      fail_dependents(j);
      return;
    }
    rec.ts.broker_accept = now();
    stage_[j] = BrokerStage::workload_manage;
    detail["user"] = rec.spec.user;
    detail["vo"] = rec.spec.vo;
    detail["class"] = to_string(rec.spec.job_class);
    if (unmet_[j] > 0) {
      detail["status"] = "held";
      return;
    }
    detail["status"] = "accepted";
    request_match(j);
  }

  void request_match(std::size_t j) {
    stage_[j] = BrokerStage::matchmake;
    awaiting_match_[j] = now();
    engine_.schedule(now(), EventKind::match_request, "broker", j);
  }

  // --- matchmaking -----------------------------------------------------------

  const InfoSnapshot& snapshot(bool force = false) {
    if (!force && snapshot_.valid && now() - snapshot_.taken < cfg_.policy.is_refresh)
      return snapshot_;
    InfoSnapshot s;
    s.taken = now();
    s.valid = true;
    for (const auto& [id, ce] : cfg_.topology.ces()) {
      const auto& st = ce_states_.at(id);
      CeInfo info;
      info.nodes = ce.nodes;
      info.free_nodes = st.idle_nodes();
      for (const auto* e : st.ordered())
        info.queued_work += ce.exec_time(e->cpu, e->nodes) * e->nodes;
      if (auto w = producers_waiting_.find(id); w != producers_waiting_.end())
        for (auto pj : w->second)
          info.queued_work += ce.exec_time(jobs_[pj].spec.cpu, jobs_[pj].spec.required_cpus) *
                              jobs_[pj].spec.required_cpus;
      for (const auto& [job, held] : st.running()) {
        const double remaining = std::max(0.0, exec_end_at_.at(job) - now());
        info.running_work += remaining * static_cast<double>(held.second.size());
      }
      for (const auto& [vo, _] : ce.vo_shares) info.vo_busy[vo] = st.vo_busy(vo);
      s.ces[id] = std::move(info);
    }
    s.link_active = link_active_;
    s.catalog = cfg_.topology.catalog();
    snapshot_ = std::move(s);
    return snapshot_;
  }

  // A catalog entry newer than the snapshot forces a refresh.
  const InfoSnapshot& snapshot_for(const JobSpec& spec, bool force = false) {
    const auto& snap = snapshot(force);
    for (const auto& ds : spec.inputs)
      if (!snap.catalog.count(ds) && !cfg_.topology.replica_lookup(ds).empty()) return snapshot(true);
    return snap;
  }

  MatchDecision matchmake_job(std::size_t j, bool force_refresh = false) {
    const auto& snap = snapshot_for(jobs_[j].spec, force_refresh);
    RngStream rng(cfg_.seed, "broker/job/" + jobs_[j].spec.id);
    return matchmake(jobs_[j].spec, cfg_.topology, snap, cfg_.policy, cfg_.accounting.prices, &rng);
  }

  void on_match(std::size_t j, nlohmann::ordered_json& detail) {
    awaiting_match_.erase(j);
    if (is_terminal(jobs_[j].status)) return;
    std::optional<MatchDecision> d;
    try {
      if (auto f = forced_.find(j); f != forced_.end()) {
        d = f->second;
        forced_.erase(f);
      } else if (cfg_.policy.mode == MatchMode::exhaustive_oracle && !in_fork_) {
        d = oracle_match(j);
      } else {
        d = matchmake_job(j);
      }
    } catch (const Error& e) {
      fail(j, e.what());
      detail["status"] = "failed";
      detail["reason"] = jobs_[j].reason;
      return;
    }
    dispatch(j, *d, true, detail);
  }

  // Dispatch after validating the decision against the live state; a stale
  // decision gets one fresh matchmaking attempt.
  void dispatch(std::size_t j, MatchDecision d, bool allow_rematch, nlohmann::ordered_json& detail) {
    auto& rec = jobs_[j];
    if (auto why = stale(j, d); !why.empty()) {
      if (!allow_rematch) {
        fail(j, "dispatch failed: " + why);
        detail["status"] = "failed";
        detail["reason"] = rec.reason;
        return;
      }
      detail["rematch"] = why;
      try {
        d = matchmake_job(j, true);
      } catch (const Error& e) {
        fail(j, e.what());
        detail["status"] = "failed";
        detail["reason"] = rec.reason;
        return;
      }
      dispatch(j, std::move(d), false, detail);
      return;
    }
    const auto& ce = cfg_.topology.ce(d.ce);
    stage_[j] = BrokerStage::adapt;
    if (rec.spec.reservation) {
      const auto& w = *rec.spec.reservation;
      try {
        if (ce.exec_time(rec.spec.cpu, rec.spec.required_cpus) > w.end - w.start)
          throw ReservationError("reservation window is shorter than the job");
        const auto id = ++next_reservation_;
        auto nodes = ce_states_.at(d.ce).reserve(ce, now(), rec.spec.required_cpus,
                                                 SimTime(w.start), SimTime(w.end), id);
        d.reservation = id;
        reservation_by_job_[rec.spec.id] = {id, nodes};
        engine_.schedule(SimTime(w.start), EventKind::reservation_start, d.ce, j);
        engine_.schedule(SimTime(w.end), EventKind::queue_poll, d.ce);
      } catch (const ReservationError& e) {
        fail(j, e.what());
        detail["status"] = "failed";
        detail["reason"] = rec.reason;
        return;
      }
    }
    rec.ts.match = now();
    rec.ce = d.ce;
    rec.status = JobStatus::matched;
    stage_[j] = BrokerStage::collect;
    detail["ce"] = d.ce;
    detail["mode"] = to_string(cfg_.policy.mode);
    detail["est_queue"] = d.estimate.queue_wait;
    detail["est_transfer"] = d.estimate.transfer;
    detail["est_exec"] = d.estimate.execution;
    if (!d.replica_for.empty()) detail["replicas"] = d.replica_for;
    if (d.reservation) detail["reservation"] = *d.reservation;

    rec.ts.transfer_start = now();
    int remote = 0;
    for (const auto& ds : rec.spec.inputs) {
      const auto& se = d.replica_for.at(ds);
      if (cfg_.topology.route(se, d.ce).empty()) continue;
      Transfer t;
      t.job = j;
      t.dataset = ds;
      t.se = se;
      t.ce = d.ce;
      t.links = cfg_.topology.route(se, d.ce);
      t.size = cfg_.topology.catalog().at(ds).at(se);
      transfers_.push_back(std::move(t));
      engine_.schedule(now(), EventKind::transfer_start, se, j, transfers_.size() - 1);
      ++remote;
    }
    pending_transfers_[j] = remote;
    decisions_[j] = d;
    stage_[j] = BrokerStage::dispatched;
    if (remote == 0) {
      rec.ts.transfer_end = now();
      arrive(j);
    } else {
      rec.status = JobStatus::transferring;
    }
  }

  std::string stale(std::size_t j, const MatchDecision& d) const {
    const auto& spec = jobs_[j].spec;
    if (!cfg_.topology.ces().count(d.ce)) return "CE '" + d.ce + "' vanished";
    const auto& ce = cfg_.topology.ce(d.ce);
    if (spec.required_cpus > ce.vo_cap(spec.vo)) return "VO share on '" + d.ce + "' shrank";
    for (const auto& ds : spec.inputs) {
      auto it = d.replica_for.find(ds);
      if (it == d.replica_for.end()) return "no replica chosen for '" + ds + "'";
      if (!cfg_.topology.has_replica(ds, it->second))
        return "replica of '" + ds + "' left '" + it->second + "'";
    }
    return {};
  }

  // --- transfers -------------------------------------------------------------

  void on_transfer_start(const Event& ev, nlohmann::ordered_json& detail) {
    auto& t = transfers_.at(ev.tag);
    const auto links = cfg_.topology.links_of(t.links);
    std::vector<int> active;
    for (const auto& id : t.links) active.push_back(link_active_.at(id));
    const double duration = transfer_time(static_cast<double>(t.size), links, active);
    t.start = now();
    t.end = now() + duration;
    t.rate = duration > 0.0 ? static_cast<double>(t.size) / duration : 0.0;
    t.active = true;
    for (const auto& id : t.links) {
      ++link_active_.at(id);
      link_rate_[id] += t.rate;
    }
    ++se_active_[t.se];
    engine_.schedule(t.end, EventKind::transfer_complete, t.ce, t.job, ev.tag);
    detail["dataset"] = t.dataset;
    detail["ce"] = t.ce;
    detail["bytes"] = t.size;
    detail["duration"] = duration;
    detail["links"] = t.links;
  }

  void on_transfer_complete(const Event& ev, nlohmann::ordered_json& detail) {
    auto& t = transfers_.at(ev.tag);
    t.active = false;
    for (const auto& id : t.links) {
      --link_active_.at(id);
      link_rate_[id] -= t.rate;
      if (link_active_.at(id) == 0) link_rate_[id] = 0.0;
    }
    --se_active_[t.se];
    auto& rec = jobs_[t.job];
    rec.staged_bytes += t.size;
    detail["dataset"] = t.dataset;
    detail["bytes"] = t.size;
    if (--pending_transfers_[t.job] == 0 && !is_terminal(rec.status)) {
      rec.ts.transfer_end = now();
      arrive(t.job);
    }
  }

  // --- CE side ---------------------------------------------------------------

  void arrive(std::size_t j) {
    const auto& ce = cfg_.topology.ce(jobs_[j].ce);
    engine_.schedule(now() + ce.fe_overhead, EventKind::queue_poll, ce.id, j);
  }

  void on_queue_poll(const Event& ev, nlohmann::ordered_json& detail) {
    if (ev.job != kNoJob) {
      const std::size_t j = ev.job;
      auto& rec = jobs_[j];
      if (is_terminal(rec.status)) return;
      const auto& ce = cfg_.topology.ce(rec.ce);
      rec.ts.queue_enter = now();
      detail["arrival"] = true;
      if (rec.spec.reservation) {
        if (now() > SimTime(rec.spec.reservation->start)) {
          fail(j, "inputs arrived after the reservation window opened");
          detail["status"] = "failed";
          return;
        }
        rec.status = JobStatus::queued;
      } else if (rec.spec.job_class == JobClass::data_producer) {
        rec.ts.queue_leave = now();
        rec.status = JobStatus::queued;
        producers_waiting_[ce.id].push_back(j);
        detail["producer"] = true;
      } else {
        QueueEntry e;
        e.job = j;
        e.job_id = rec.spec.id;
        e.user = rec.spec.user;
        e.vo = rec.spec.vo;
        e.cpu = rec.spec.cpu;
        e.nodes = rec.spec.required_cpus;
        e.enqueued = now();
        try {
          ce_states_.at(ce.id).enqueue(ce, rec.spec.queue, std::move(e));
        } catch (const ConfigError& err) {
          fail(j, err.what());
          detail["status"] = "failed";
          return;
        }
        rec.status = JobStatus::queued;
      }
    }
    try_start(ev.target);
  }

  // Waiting data producers take free nodes before any queued job.
  void try_start(const std::string& ce_id) {
    const auto& ce = cfg_.topology.ce(ce_id);
    auto& st = ce_states_.at(ce_id);
    auto& waiting = producers_waiting_[ce_id];
    while (!waiting.empty()) {
      const std::size_t j = waiting.front();
      const auto& spec = jobs_[j].spec;
      if (st.vo_busy(spec.vo) + spec.required_cpus > ce.vo_cap(spec.vo)) break;
      auto nodes = st.pick_nodes(now(), spec.required_cpus,
                                 ce.exec_time(spec.cpu, spec.required_cpus));
      if (nodes.empty()) break;
      waiting.pop_front();
      jobs_[j].node_wait = now() - *jobs_[j].ts.queue_leave;
      start_exec(j, nodes);
    }
    if (!waiting.empty()) return;
    while (auto next = st.next_job(ce, now())) {
      auto nodes = st.pick_nodes(now(), next->nodes, ce.exec_time(next->cpu, next->nodes));
      st.remove_queued(next->job);
      jobs_[next->job].ts.queue_leave = now();
      start_exec(next->job, nodes);
    }
  }

  void start_exec(std::size_t j, const std::vector<int>& nodes) {
    auto& rec = jobs_[j];
    const auto& ce = cfg_.topology.ce(rec.ce);
    const double duration = ce.exec_time(rec.spec.cpu, rec.spec.required_cpus);
    const SimTime end = now() + duration;
    ce_states_.at(rec.ce).occupy(j, rec.spec.vo, nodes, end);
    rec.nodes = nodes;
    rec.ts.exec_start = now();
    rec.status = JobStatus::running;
    exec_end_at_[j] = end;
    engine_.schedule(now(), EventKind::exec_start, rec.ce, j);
    engine_.schedule(end, EventKind::exec_complete, rec.ce, j);
  }

  void on_exec_start(const Event& ev, nlohmann::ordered_json& detail) {
    const auto& rec = jobs_[ev.job];
    detail["nodes"] = rec.nodes;
    detail["speed_factor"] = speed_factor(cfg_.topology.ce(rec.ce), cfg_.topology);
  }

  void on_reservation_start(std::size_t j, nlohmann::ordered_json& detail) {
    auto& rec = jobs_[j];
    if (is_terminal(rec.status)) return;
    const auto& res = reservation_by_job_.at(rec.spec.id);
    if (rec.status != JobStatus::queued || !rec.ts.queue_enter) {
      fail(j, "job was not at the CE when its reservation opened");
      detail["status"] = "failed";
      return;
    }
    rec.ts.queue_leave = now();
    start_exec(j, res.second);
    detail["nodes"] = res.second;
  }

  void on_exec_complete(std::size_t j, nlohmann::ordered_json& detail) {
    auto& rec = jobs_[j];
    const auto& ce = cfg_.topology.ce(rec.ce);
    ce_states_.at(rec.ce).release(j);
    exec_end_at_.erase(j);
    rec.ts.exec_end = now();
    detail["nodes"] = rec.nodes.size();
    detail["speed_factor"] = speed_factor(ce, cfg_.topology);
    if (rec.spec.output_bytes > 0 && !store_output(j)) {
      fail(j, "no storage element can hold the job output");
      detail["status"] = "failed";
      try_start(rec.ce);
      return;
    }
    rec.status = JobStatus::done;
    record_usage(j);
    detail["status"] = "done";
    detail["utility"] = utility_[j];
    window_utilities_.push_back(utility_[j]);
    if (rl_) {
      rl_->utility_sum += utility_[j];
      ++rl_->utility_count;
    }
    release_dependents(j);
    drop_intermediate_inputs(j);
    try_start(rec.ce);
  }

  // Output goes to an SE at the CE's site, else the nearest SE with room.
  bool store_output(std::size_t j) {
    const auto& rec = jobs_[j];
    const std::string ds = rec.spec.id + ".out";
    const auto& site = cfg_.topology.site_of(rec.ce);
    std::vector<std::pair<double, std::string>> order;
    for (const auto& [id, se] : cfg_.topology.ses()) {
      if (!cfg_.topology.reachable(rec.ce, id)) continue;
      double lat = se.site == site ? -1.0 : 0.0;
      for (const auto* l : cfg_.topology.links_of(cfg_.topology.route(rec.ce, id))) lat += l->latency;
      order.emplace_back(lat, id);
    }
    std::sort(order.begin(), order.end());
    for (const auto& [_, se] : order) {
      if (cfg_.topology.se(se).free() >= rec.spec.output_bytes) {
        cfg_.topology.replica_place(ds, se, rec.spec.output_bytes);
        return true;
      }
    }
    return false;
  }

  bool referenced(const std::string& ds) const {
    for (const auto& r : jobs_) {
      if (is_terminal(r.status)) continue;
      if (std::find(r.spec.inputs.begin(), r.spec.inputs.end(), ds) != r.spec.inputs.end())
        return true;
    }
    return false;
  }

  // Intermediate pipeline data is released once no pending job reads it.
  void drop_intermediate_inputs(std::size_t j) {
    const auto& spec = jobs_[j].spec;
    for (const auto& pred : spec.deps) {
      const std::string ds = pred + ".out";
      if (std::find(spec.inputs.begin(), spec.inputs.end(), ds) == spec.inputs.end()) continue;
      if (referenced(ds)) continue;
      for (const auto& r : cfg_.topology.replica_lookup(ds)) cfg_.topology.replica_drop(ds, r.se);
    }
  }

  void release_dependents(std::size_t j) {
    for (auto d : dependents_[j]) {
      if (--unmet_[d] == 0 && jobs_[d].ts.broker_accept && !is_terminal(jobs_[d].status))
        request_match(d);
    }
  }

  void fail_dependents(std::size_t j) {
    for (auto d : dependents_[j]) {
      if (jobs_[d].ts.broker_accept && !is_terminal(jobs_[d].status))
        fail(d, "predecessor '" + jobs_[j].spec.id + "' did not complete");
    }
  }

  void fail(std::size_t j, const std::string& reason) {
    auto& rec = jobs_[j];
    rec.status = JobStatus::failed;
    rec.reason = reason;
    if (auto it = reservation_by_job_.find(rec.spec.id); it != reservation_by_job_.end() && !rec.ce.empty())
      ce_states_.at(rec.ce).cancel_reservation(it->second.first);
    ce_states_.count(rec.ce) ? ce_states_.at(rec.ce).remove_queued(j) : void();
    record_usage(j);
    fail_dependents(j);
  }

  void record_usage(std::size_t j) {
    const auto& rec = jobs_[j];
    UsageRecord u;
    u.job = rec.spec.id;
    u.user = rec.spec.user;
    u.vo = rec.spec.vo;
    u.status = std::string(to_string(rec.status));
    if (rec.ts.exec_start && rec.ts.exec_end) {
      u.wall_seconds = *rec.ts.exec_end - *rec.ts.exec_start;
      u.cpu_seconds = u.wall_seconds * static_cast<double>(rec.nodes.size());
    }
    u.bytes_in = static_cast<double>(rec.staged_bytes);
    if (rec.status == JobStatus::done) u.bytes_out = static_cast<double>(rec.spec.output_bytes);
    if (rec.ts.exec_end && rec.ts.transfer_end)
      u.storage_byte_seconds =
          static_cast<double>(rec.staged_bytes) * (*rec.ts.exec_end - *rec.ts.transfer_end);
    if (rec.status == JobStatus::done) {
      utility_[j] = utility_of(rec, cfg_.utility, u.resources());
      u.utility = utility_[j];
    }
    accounting_.record_usage(std::move(u));
  }

  // --- metrics ---------------------------------------------------------------

  void advance_integrals() {
    const double dt = now() - integral_time_;
    if (dt <= 0.0) return;
    for (const auto& [id, st] : ce_states_) {
      const double busy = static_cast<double>(st.busy_nodes());
      if (busy > 0.0) integral_[id] += busy * dt;
    }
    for (const auto& [id, rate] : link_rate_)
      if (rate > 0.0) integral_[id] += rate * dt;
    for (const auto& [id, n] : se_active_)
      if (n > 0) integral_[id] += dt;
    integral_time_ = now();
  }

  double integral(const std::string& id) const {
    auto it = integral_.find(id);
    return it == integral_.end() ? 0.0 : it->second;
  }

  double agents_at(const std::string& id) const {
    double n = 0.0;
    const auto kind = cfg_.topology.has(id) ? cfg_.topology.kind_of(id) : ComponentKind::site;
    if (kind == ComponentKind::ce) {
      for (const auto& r : jobs_)
        if (r.ce == id && (r.status == JobStatus::queued || r.status == JobStatus::running)) n += 1.0;
    } else {
      for (const auto& t : transfers_)
        if (t.active && (t.se == id || std::find(t.links.begin(), t.links.end(), id) != t.links.end()))
          n += 1.0;
    }
    return n;
  }

  void on_metric_sample(nlohmann::ordered_json& detail) {
    const double t1 = now().seconds();
    const double t0 = t1 - cfg_.metrics.window;
    MetricSnapshot s;
    s.t0 = t0;
    s.t1 = t1;
    s.ids = cfg_.metrics.subsystems;
    for (const auto& id : s.ids) {
      const double total = integral(id);
      s.flow.push_back(total - window_marks_[id]);
      window_marks_[id] = total;
      s.agents.push_back(agents_at(id));
    }
    const auto dist = LoadDistribution::from_loads(t0, t1, s.ids, s.flow);
    s.shannon = shannon_entropy(dist.shares);
    for (double q : cfg_.metrics.renyi_orders) s.renyi.emplace_back(q, renyi_entropy(dist.shares, q));
    s.completed = window_utilities_.size();
    if (!window_utilities_.empty()) {
      double m = 0.0;
      for (double u : window_utilities_) m += u;
      m /= static_cast<double>(window_utilities_.size());
      double ss = 0.0;
      for (double u : window_utilities_) ss += (u - m) * (u - m);
      s.utility_mean = m;
      s.utility_variance =
          window_utilities_.size() > 1 ? ss / static_cast<double>(window_utilities_.size() - 1) : 0.0;
    }
    window_utilities_.clear();
    detail["shannon"] = s.shannon;
    snapshots_.push_back(std::move(s));
    const SimTime next = now() + cfg_.metrics.window;
    if (next.seconds() <= cfg_.duration) engine_.schedule(next, EventKind::metric_sample, "metrics");
  }

  // A period starts at its boundary instant, before any other event there,
  // so a submission exactly on the boundary is charged to the new period.
  void roll_due_periods() {
    while (now() >= SimTime(cfg_.accounting.period * static_cast<double>(periods_rolled_ + 1)))
      accounting_.roll_period(++periods_rolled_);
  }

  void on_quota_period(const Event& ev, nlohmann::ordered_json& detail) {
    detail["period"] = ev.tag;
    const SimTime next(cfg_.accounting.period * static_cast<double>(ev.tag + 1));
    if (next.seconds() <= cfg_.duration)
      engine_.schedule(next, EventKind::quota_period, "accounting", kNoJob, ev.tag + 1);
  }

  // --- reinforcement learning --------------------------------------------------

  std::size_t observe_state() {
    auto& rl = *rl_;
    const double len = rl.settings.episode_length;
    std::size_t state = 0;
    for (const auto& id : rl.settings.features) {
      const double done = integral(id) - rl.marks[id];
      double capacity = 1.0;
      if (cfg_.topology.ces().count(id)) {
        capacity = cfg_.topology.ce(id).nodes * len;
      } else if (cfg_.topology.has_link(id)) {
        capacity = cfg_.topology.link(id).capacity * len;
      } else {
        capacity = len;
      }
      state = state * rl.settings.levels() + rl.settings.level_of(done / capacity);
    }
    for (const auto& id : rl.settings.features) rl.marks[id] = integral(id);
    return state;
  }

  void on_reconfigure(nlohmann::ordered_json& detail) {
    auto& rl = *rl_;
    const std::size_t next_state = observe_state();
    if (rl.episode > 0) {
      const double reward =
          rl.utility_count > 0 ? rl.utility_sum / static_cast<double>(rl.utility_count) : 0.0;
      rl.outcome.table.update(rl.state, rl.action, reward, next_state, false, rl.settings.learning);
      rl.outcome.reward_curve.push_back(reward);
      detail["reward"] = reward;
    }
    rl.state = next_state;
    rl.utility_sum = 0.0;
    rl.utility_count = 0;
    const SimTime next = now() + rl.settings.episode_length;
    if (next.seconds() > cfg_.duration) return;
    const double eps = rl.settings.learning.epsilon_at(rl.episode, std::max<std::size_t>(1, rl.episodes));
    rl.action = rl.outcome.table.choose(rl.state, eps, rl.rng);
    const auto& act = rl.settings.actions[rl.action];
    const bool applied = apply_reconfiguration(act, cfg_.topology,
                                               [this](const std::string& ds) { return referenced(ds); });
    snapshot_.valid = false;
    rl.outcome.actions_taken.push_back(act.label());
    rl.outcome.applied.push_back(applied);
    rl.outcome.states_seen.push_back(rl.state);
    detail["state"] = rl.state;
    detail["action"] = act.label();
    detail["applied"] = applied;
    ++rl.episode;
    engine_.schedule(next, EventKind::reconfigure, "optimizer");
  }

  // --- exhaustive oracle ---------------------------------------------------------

  // Every job whose matchmaking is due now forms the batch. Each assignment
  // of batch jobs to feasible CEs is played forward on a fork of the live
  // state (future arrivals unknown to the broker are removed) and scored by
  // the realized batch objective. Ties go to the first assignment in
  // lexicographic CE-id order.
  MatchDecision oracle_match(std::size_t j) {
    std::vector<std::size_t> batch;
    for (const auto& [job, at] : awaiting_match_)
      if (at == now() && !is_terminal(jobs_[job].status)) batch.push_back(job);
    batch.push_back(j);
    std::sort(batch.begin(), batch.end());
    batch.erase(std::unique(batch.begin(), batch.end()), batch.end());

    for (auto b : batch) snapshot_for(jobs_[b].spec);
    const auto& snap = snapshot_;
    std::vector<std::vector<MatchDecision>> options(batch.size());
    std::size_t space = 1;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& spec = jobs_[batch[b]].spec;
      check_pins(spec, cfg_.topology);
      for (const auto& ce : feasible_ces(spec, cfg_.topology, snap))
        options[b].push_back(
            decide(spec, ce, cfg_.topology, snap, cfg_.policy, cfg_.accounting.prices, false));
      if (options[b].empty()) {
        if (batch[b] == j) throw NoMatchError("job '" + spec.id + "' has no feasible CE");
        options[b].clear();
      }
      if (!options[b].empty()) {
        space *= options[b].size();
        if (space > cfg_.policy.oracle_limit) return matchmake_job(j);
      }
    }
    std::vector<std::size_t> members;
    for (std::size_t b = 0; b < batch.size(); ++b)
      if (!options[b].empty()) members.push_back(b);

    auto saved_trace = std::move(trace_);
    auto saved_snaps = std::move(snapshots_);
    trace_.clear();
    snapshots_.clear();
    Simulation base = *this;
    trace_ = std::move(saved_trace);
    snapshots_ = std::move(saved_snaps);
    base.cfg_.trace = false;
    base.cfg_.verify_invariants = false;
    base.in_fork_ = true;
    base.engine_.discard_if([](const Event& e) {
      return e.kind == EventKind::job_submit || e.kind == EventKind::metric_sample ||
             e.kind == EventKind::reconfigure;
    });

    std::vector<std::size_t> pick(members.size(), 0);
    std::vector<std::size_t> best_pick;
    double best = std::numeric_limits<double>::infinity();
    while (true) {
      Simulation fork = base;
      for (std::size_t m = 0; m < members.size(); ++m) {
        const auto b = members[m];
        if (batch[b] != j) fork.forced_[batch[b]] = options[b][pick[m]];
      }
      const auto jm = static_cast<std::size_t>(
          std::find_if(members.begin(), members.end(), [&](std::size_t b) { return batch[b] == j; }) -
          members.begin());
      nlohmann::ordered_json scratch;
      fork.dispatch(j, options[members[jm]][pick[jm]], true, scratch);
      std::vector<std::size_t> watched;
      for (auto b : members) watched.push_back(batch[b]);
      fork.engine_.run_while(
          SimTime(std::numeric_limits<double>::max()),
          [&] {
            return std::any_of(watched.begin(), watched.end(),
                               [&](std::size_t w) { return !is_terminal(fork.jobs_[w].status); });
          },
          [&fork](const Event& ev) { fork.handle(ev); });
      ++oracle_evaluations_;
      const double value = fork.batch_objective(watched);
      if (value < best) {
        best = value;
        best_pick = pick;
      }
      std::size_t pos = members.size();
      while (pos > 0) {
        --pos;
        if (++pick[pos] < options[members[pos]].size()) break;
        pick[pos] = 0;
        if (pos == 0) {
          pos = members.size() + 1;
          break;
        }
      }
      if (pos == members.size() + 1 || members.empty()) break;
    }
    if (best_pick.empty()) return matchmake_job(j);
    MatchDecision mine;
    for (std::size_t m = 0; m < members.size(); ++m) {
      const auto b = members[m];
      if (batch[b] == j)
        mine = options[b][best_pick[m]];
      else
        forced_[batch[b]] = options[b][best_pick[m]];
    }
    return mine;
  }

  double batch_objective(const std::vector<std::size_t>& watched) const {
    double sum = 0.0;
    double last = 0.0;
    for (auto w : watched) {
      const auto& r = jobs_[w];
      if (r.status != JobStatus::done) return std::numeric_limits<double>::infinity();
      sum += *r.ts.exec_end - *r.ts.submit;
      last = std::max(last, r.ts.exec_end->seconds());
    }
    if (cfg_.policy.objective == BatchObjective::makespan) return last;
    return sum / static_cast<double>(watched.size());
  }

  // --- state -------------------------------------------------------------------

  SimulationConfig cfg_;
  Engine engine_;
  Accounting accounting_;
  std::vector<JobRecord> jobs_;
  std::map<std::string, std::size_t> index_;
  std::vector<SimTime> submit_at_;
  std::vector<std::vector<std::size_t>> dependents_;
  std::vector<int> unmet_;
  std::vector<BrokerStage> stage_;
  std::vector<int> pending_transfers_;
  std::vector<std::optional<MatchDecision>> decisions_;
  std::vector<double> utility_;
  std::map<std::string, CeState> ce_states_;
  std::map<std::string, std::deque<std::size_t>> producers_waiting_;
  std::map<std::size_t, SimTime> exec_end_at_;
  std::vector<Transfer> transfers_;
  std::map<std::string, int> link_active_;
  std::map<std::string, double> link_rate_;
  std::map<std::string, int> se_active_;
  std::map<std::string, double> integral_;
  SimTime integral_time_;
  std::map<std::string, double> window_marks_;
  std::vector<double> window_utilities_;
  std::vector<MetricSnapshot> snapshots_;
  std::map<std::string, std::pair<std::uint64_t, std::vector<int>>> reservation_by_job_;
  std::uint64_t next_reservation_ = 0;
  InfoSnapshot snapshot_;
  std::map<std::size_t, SimTime> awaiting_match_;
  std::map<std::size_t, MatchDecision> forced_;
  std::optional<RlRuntime> rl_;
  std::vector<std::string> trace_;
  std::size_t oracle_evaluations_ = 0;
  std::size_t periods_rolled_ = 0;
  bool in_fork_ = false;
  bool finished_ = false;
};

}  // namespace gridsim

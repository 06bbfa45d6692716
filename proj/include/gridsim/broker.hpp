#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gridsim/accounting.hpp"
#include "gridsim/error.hpp"
#include "gridsim/grid_model.hpp"
#include "gridsim/rng.hpp"
#include "gridsim/sim_core.hpp"
#include "gridsim/workload.hpp"

namespace gridsim {

// Resource Broker workflow: UI intake, workload manager, matchmaker (backed
// by the information system and replica catalog), job adapter, job collector.
enum class BrokerStage { intake, workload_manage, matchmake, adapt, collect, dispatched };

constexpr std::string_view to_string(BrokerStage s) {
  switch (s) {
    case BrokerStage::intake: return "intake";
    case BrokerStage::workload_manage: return "workload-manage";
    case BrokerStage::matchmake: return "matchmake";
    case BrokerStage::adapt: return "adapt";
    case BrokerStage::collect: return "collect";
    case BrokerStage::dispatched: return "dispatched";
  }
  return "intake";
}

enum class MatchMode { constrained_game, free_choice, exhaustive_oracle, random };

constexpr std::string_view to_string(MatchMode m) {
  switch (m) {
    case MatchMode::constrained_game: return "constrained-game";
    case MatchMode::free_choice: return "free-choice";
    case MatchMode::exhaustive_oracle: return "exhaustive-oracle";
    case MatchMode::random: return "random";
  }
  return "free-choice";
}

inline std::optional<MatchMode> parse_match_mode(std::string_view s) {
  for (auto m : {MatchMode::constrained_game, MatchMode::free_choice,
                 MatchMode::exhaustive_oracle, MatchMode::random})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

enum class BatchObjective { mean_turnaround, makespan };

struct MatchPolicy {
  MatchMode mode = MatchMode::free_choice;
  double w_queue = 1.0;
  double w_transfer = 1.0;
  double w_execution = 1.0;
  double w_price = 0.0;        // price coupling; 0 keeps money out of matchmaking
  double is_refresh = 30.0;    // information-system snapshot age limit, seconds
  BatchObjective objective = BatchObjective::mean_turnaround;
  std::size_t oracle_limit = 4096;  // largest assignment space enumerated

  bool valid() const {
    for (double w : {w_queue, w_transfer, w_execution, w_price})
      if (!(w >= 0.0) || !std::isfinite(w)) return false;
    return (w_queue + w_transfer + w_execution + w_price) > 0.0 && is_refresh >= 0.0;
  }
};

struct CeInfo {
  int nodes = 1;
  int free_nodes = 1;
  double queued_work = 0.0;   // node-seconds of queued jobs
  double running_work = 0.0;  // node-seconds still to run
  std::map<std::string, int> vo_busy;
};

// What the broker believes about the Grid; refreshed every is_refresh seconds.
struct InfoSnapshot {
  SimTime taken;
  bool valid = false;
  std::map<std::string, CeInfo> ces;
  std::map<std::string, int> link_active;
  std::map<std::string, std::map<std::string, Bytes>> catalog;
};

struct CostEstimate {
  double queue_wait = 0.0;
  double transfer = 0.0;
  double execution = 0.0;
  double price = 0.0;
  double total = 0.0;
};

struct MatchDecision {
  std::string job;
  std::string ce;
  std::map<std::string, std::string> replica_for;  // dataset -> SE
  CostEstimate estimate;
  std::optional<std::uint64_t> reservation;
};

// Jobs ahead divided over the CE's nodes; running work only counts when the
// job cannot start on the free nodes.
inline double estimate_queue_wait(const CeInfo& info, int required) {
  double work = info.queued_work;
  if (info.free_nodes < required || info.queued_work > 0.0) work += info.running_work;
  return work / static_cast<double>(info.nodes);
}

inline double estimate_transfer_for(const GridTopology& topo, const InfoSnapshot& snap,
                                    const std::string& se, const std::string& ce, Bytes size) {
  const auto& path = topo.route(se, ce);
  if (path.empty()) return 0.0;
  std::vector<int> active;
  for (const auto& id : path) {
    auto it = snap.link_active.find(id);
    active.push_back(it == snap.link_active.end() ? 0 : it->second);
  }
  const auto links = topo.links_of(path);
  return transfer_time(static_cast<double>(size), links, active);
}

namespace detail {

inline const std::map<std::string, Bytes>* replicas_in(const InfoSnapshot& snap,
                                                       const std::string& dataset) {
  auto it = snap.catalog.find(dataset);
  return it == snap.catalog.end() ? nullptr : &it->second;
}

}  // namespace detail

// Hard constraints of a job against one CE; empty string means feasible.
inline std::string infeasibility(const JobSpec& job, const ComputingElement& ce,
                                 const GridTopology& topo, const InfoSnapshot& snap) {
  if (job.required_cpus > ce.nodes) return "needs more CPUs than CE '" + ce.id + "' has";
  if (job.required_cpus > ce.vo_cap(job.vo))
    return "VO '" + job.vo + "' share on '" + ce.id + "' is too small";
  if (!job.queue.empty() && !ce.find_queue(job.queue) && job.job_class != JobClass::data_producer)
    return "CE '" + ce.id + "' has no queue '" + job.queue + "'";
  for (const auto& ds : job.inputs) {
    const auto* reps = detail::replicas_in(snap, ds);
    const std::size_t count = reps ? reps->size() : 0;
    if (count == 0 || count < static_cast<std::size_t>(std::max(1, job.min_replicas)))
      return "dataset '" + ds + "' has too few replicas";
    if (auto pin = job.pin.se_for_dataset.find(ds); pin != job.pin.se_for_dataset.end()) {
      if (!reps->count(pin->second)) return "pinned SE '" + pin->second + "' lacks '" + ds + "'";
      if (!topo.reachable(pin->second, ce.id)) return "no route from '" + pin->second + "'";
    } else {
      bool any = false;
      for (const auto& [se, _] : *reps) any = any || topo.reachable(se, ce.id);
      if (!any) return "no reachable replica of '" + ds + "'";
    }
  }
  return {};
}

// Replica per input: pinned SE, else the cheapest transfer estimate (or the
// lowest route latency when `static_choice`), ties to the lowest SE id.
inline std::map<std::string, std::string> choose_replicas(const JobSpec& job, const std::string& ce,
                                                          const GridTopology& topo,
                                                          const InfoSnapshot& snap,
                                                          bool static_choice, double* max_transfer) {
  std::map<std::string, std::string> chosen;
  double worst = 0.0;
  for (const auto& ds : job.inputs) {
    const auto* reps = detail::replicas_in(snap, ds);
    if (!reps) throw NoMatchError("dataset '" + ds + "' has no replica");
    std::string best;
    double best_cost = std::numeric_limits<double>::infinity();
    double best_time = 0.0;
    for (const auto& [se, size] : *reps) {
      if (auto pin = job.pin.se_for_dataset.find(ds);
          pin != job.pin.se_for_dataset.end() && pin->second != se)
        continue;
      if (!topo.reachable(se, ce)) continue;
      double cost = 0.0;
      if (static_choice) {
        for (const auto* l : topo.links_of(topo.route(se, ce))) cost += l->latency;
      } else {
        cost = estimate_transfer_for(topo, snap, se, ce, size);
      }
      if (cost < best_cost) {
        best_cost = cost;
        best = se;
        best_time = static_choice ? estimate_transfer_for(topo, snap, se, ce, size) : cost;
      }
    }
    if (best.empty()) throw NoMatchError("no usable replica of '" + ds + "' for '" + ce + "'");
    chosen[ds] = best;
    worst = std::max(worst, best_time);
  }
  if (max_transfer) *max_transfer = worst;
  return chosen;
}

inline Bytes staged_bytes(const std::string& ce, const std::map<std::string, std::string>& replicas,
                          const GridTopology& topo, const InfoSnapshot& snap) {
  Bytes total = 0;
  for (const auto& [ds, se] : replicas)
    if (!topo.route(se, ce).empty()) total += snap.catalog.at(ds).at(se);
  return total;
}

inline CostEstimate estimate_cost(const JobSpec& job, const ComputingElement& ce,
                                  const std::map<std::string, std::string>& replicas,
                                  double transfer, const GridTopology& topo,
                                  const InfoSnapshot& snap, const MatchPolicy& policy,
                                  const PriceSchedule& prices) {
  CostEstimate c;
  auto info = snap.ces.find(ce.id);
  c.queue_wait = info == snap.ces.end() ? 0.0 : estimate_queue_wait(info->second, job.required_cpus);
  c.transfer = transfer;
  c.execution = ce.exec_time(job.cpu, job.required_cpus);
  if (policy.w_price > 0.0) {
    c.price = prices.cpu * job.cpu / topo.reference_speed +
              prices.byte * static_cast<double>(staged_bytes(ce.id, replicas, topo, snap));
  }
  c.total = policy.w_queue * c.queue_wait + policy.w_transfer * c.transfer +
            policy.w_execution * c.execution + policy.w_price * c.price;
  return c;
}

// Feasible CEs in id order.
inline std::vector<std::string> feasible_ces(const JobSpec& job, const GridTopology& topo,
                                             const InfoSnapshot& snap) {
  std::vector<std::string> out;
  if (job.pin.ce) {
    if (!topo.ces().count(*job.pin.ce))
      throw ConstraintError("job '" + job.id + "' pins unknown CE '" + *job.pin.ce + "'");
    if (infeasibility(job, topo.ce(*job.pin.ce), topo, snap).empty()) out.push_back(*job.pin.ce);
    return out;
  }
  for (const auto& [id, ce] : topo.ces())
    if (infeasibility(job, ce, topo, snap).empty()) out.push_back(id);
  return out;
}

inline void check_pins(const JobSpec& job, const GridTopology& topo) {
  if (job.pin.ce && !topo.ces().count(*job.pin.ce))
    throw ConstraintError("job '" + job.id + "' pins unknown CE '" + *job.pin.ce + "'");
  for (const auto& [ds, se] : job.pin.se_for_dataset)
    if (!topo.ses().count(se))
      throw ConstraintError("job '" + job.id + "' pins unknown SE '" + se + "'");
}

inline MatchDecision decide(const JobSpec& job, const std::string& ce, const GridTopology& topo,
                            const InfoSnapshot& snap, const MatchPolicy& policy,
                            const PriceSchedule& prices, bool static_replicas) {
  MatchDecision d;
  d.job = job.id;
  d.ce = ce;
  double transfer = 0.0;
  d.replica_for = choose_replicas(job, ce, topo, snap, static_replicas, &transfer);
  d.estimate = estimate_cost(job, topo.ce(ce), d.replica_for, transfer, topo, snap, policy, prices);
  return d;
}

// Matchmaking for the constrained-game, free-choice and random modes. The
// exhaustive oracle needs forward simulation and lives in the Simulation.
//
// Constrained-game: the job's pins decide. An unpinned job gets the CE
// nearest (by route latency) to its submitting UI, so the result depends
// on the job and the static topology only, never on load.
inline MatchDecision matchmake(const JobSpec& job, const GridTopology& topo,
                               const InfoSnapshot& snap, const MatchPolicy& policy,
                               const PriceSchedule& prices = {}, RngStream* rng = nullptr) {
  check_pins(job, topo);
  switch (policy.mode) {
    case MatchMode::constrained_game: {
      std::string target;
      if (job.pin.ce) {
        target = *job.pin.ce;
      } else {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& [id, ce] : topo.ces()) {
          if (!job.ui.empty() && !topo.reachable(job.ui, id)) continue;
          double lat = 0.0;
          if (!job.ui.empty())
            for (const auto* l : topo.links_of(topo.route(job.ui, id))) lat += l->latency;
          if (lat < best) {
            best = lat;
            target = id;
          }
        }
      }
      if (target.empty()) throw NoMatchError("job '" + job.id + "' reaches no CE");
      if (auto why = infeasibility(job, topo.ce(target), topo, snap); !why.empty())
        throw NoMatchError("job '" + job.id + "': " + why);
      return decide(job, target, topo, snap, policy, prices, true);
    }
    case MatchMode::random: {
      const auto ces = feasible_ces(job, topo, snap);
      if (ces.empty()) throw NoMatchError("job '" + job.id + "' has no feasible CE");
      if (!rng) throw ConfigError("random matchmaking needs a random stream");
      return decide(job, ces[rng->below(ces.size())], topo, snap, policy, prices, true);
    }
    case MatchMode::free_choice:
    case MatchMode::exhaustive_oracle: {
      const auto ces = feasible_ces(job, topo, snap);
      if (ces.empty()) throw NoMatchError("job '" + job.id + "' has no feasible CE");
      std::optional<MatchDecision> best;
      for (const auto& id : ces) {
        auto d = decide(job, id, topo, snap, policy, prices, false);
        if (!best || d.estimate.total < best->estimate.total) best = std::move(d);
      }
      return *best;
    }
  }
  throw ConfigError("unknown match mode");
}

}  // namespace gridsim

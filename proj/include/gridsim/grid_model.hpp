#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "gridsim/error.hpp"
#include "gridsim/sim_core.hpp"

namespace gridsim {

using Bytes = std::uint64_t;

enum class ComponentKind { site, ui, ce, se };

enum class QueueDiscipline { fifo, priority };

struct NamedQueue {
  std::string name;
  QueueDiscipline discipline = QueueDiscipline::fifo;
  // user or VO -> priority weight; users are looked up first.
  std::map<std::string, double> weights;

  double weight_for(const std::string& user, const std::string& vo) const {
    if (discipline == QueueDiscipline::fifo) return 1.0;
    if (auto it = weights.find(user); it != weights.end()) return it->second;
    if (auto it = weights.find(vo); it != weights.end()) return it->second;
    return 1.0;
  }
};

struct ComputingElement {
  std::string id;
  std::string site;
  double fe_overhead = 0.0;  // seconds per job at the front end
  int nodes = 1;
  double speed = 1.0;  // normalized operations per second per node
  std::vector<NamedQueue> queues;
  std::map<std::string, double> vo_shares;

  // Node cap for a VO. No shares configured means the CE is open to all.
  int vo_cap(const std::string& vo) const {
    if (vo_shares.empty()) return nodes;
    auto it = vo_shares.find(vo);
    if (it == vo_shares.end()) return 0;
    return static_cast<int>(std::floor(it->second * nodes + 1e-9));
  }

  double exec_time(double cpu_demand, int allotted) const {
    return cpu_demand / (speed * static_cast<double>(allotted));
  }

  const NamedQueue* find_queue(const std::string& name) const {
    for (const auto& q : queues)
      if (q.name == name) return &q;
    return nullptr;
  }
};

struct StorageElement {
  std::string id;
  std::string site;
  Bytes capacity = 0;
  Bytes used = 0;

  Bytes free() const { return capacity - used; }
};

struct Link {
  std::string id;
  std::string a;
  std::string b;
  double capacity = 1.0;  // bytes / second
  double latency = 0.0;   // seconds
  bool logical = true;
};

struct Replica {
  std::string dataset;
  std::string se;
  Bytes size = 0;
};

struct Site {
  std::string id;
  std::vector<std::string> uis;
  std::vector<std::string> ces;
  std::vector<std::string> ses;
};

// Seconds to move `size` bytes along `path`: the sum of latencies plus the
// size over the fair-shared bottleneck rate min(capacity / (active + 1)).
inline double transfer_time(double size, std::span<const Link* const> path,
                            std::span<const int> concurrent) {
  double latency = 0.0;
  double rate = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < path.size(); ++i) {
    latency += path[i]->latency;
    const int active = i < concurrent.size() ? concurrent[i] : 0;
    rate = std::min(rate, path[i]->capacity / static_cast<double>(active + 1));
  }
  if (size <= 0.0) return latency;
  if (path.empty()) throw DomainError("transfer of a nonzero size needs a nonempty path");
  return latency + size / rate;
}

// Static description plus mutable replica catalog and link capacities.
// Components of a site reach each other and the site node without links;
// everything else goes over explicit logical links.
class GridTopology {
 public:
  double reference_speed = 1.0;
  std::string broker_site;

  void add_site(const std::string& id) {
    claim(id, ComponentKind::site, id);
    sites_[id] = Site{id, {}, {}, {}};
  }

  void add_ui(const std::string& id, const std::string& site) {
    claim(id, ComponentKind::ui, site);
    site_ref(site).uis.push_back(id);
  }

  void add_ce(ComputingElement ce) {
    if (ce.queues.empty()) ce.queues.push_back(NamedQueue{"default", QueueDiscipline::fifo, {}});
    claim(ce.id, ComponentKind::ce, ce.site);
    site_ref(ce.site).ces.push_back(ce.id);
    ces_[ce.id] = std::move(ce);
  }

  void add_se(StorageElement se) {
    claim(se.id, ComponentKind::se, se.site);
    site_ref(se.site).ses.push_back(se.id);
    se.used = 0;
    ses_[se.id] = std::move(se);
  }

  void add_link(Link link) {
    if (links_.count(link.id) || kinds_.count(link.id))
      throw ConfigError("duplicate id '" + link.id + "'");
    links_[link.id] = std::move(link);
    route_cache_.clear();
  }

  bool has(const std::string& id) const { return kinds_.count(id) > 0; }
  bool has_link(const std::string& id) const { return links_.count(id) > 0; }

  ComponentKind kind_of(const std::string& id) const {
    auto it = kinds_.find(id);
    if (it == kinds_.end()) throw ConfigError("unknown component '" + id + "'");
    return it->second;
  }

  const std::string& site_of(const std::string& id) const {
    auto it = site_of_.find(id);
    if (it == site_of_.end()) throw ConfigError("unknown component '" + id + "'");
    return it->second;
  }

  const std::map<std::string, Site>& sites() const { return sites_; }
  const std::map<std::string, ComputingElement>& ces() const { return ces_; }
  const std::map<std::string, StorageElement>& ses() const { return ses_; }
  const std::map<std::string, Link>& links() const { return links_; }

  const ComputingElement& ce(const std::string& id) const { return lookup(ces_, id, "CE"); }
  const StorageElement& se(const std::string& id) const { return lookup(ses_, id, "SE"); }
  const Link& link(const std::string& id) const { return lookup(links_, id, "link"); }

  std::vector<const Link*> links_of(const std::vector<std::string>& ids) const {
    std::vector<const Link*> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(&link(id));
    return out;
  }

  // Minimum-latency path; equal-latency paths resolve to the
  // lexicographically smallest sequence of link ids.
  const std::vector<std::string>& route(const std::string& src, const std::string& dst) const {
    if (!has(src)) throw ConfigError("route: unknown component '" + src + "'");
    if (!has(dst)) throw ConfigError("route: unknown component '" + dst + "'");
    auto key = std::make_pair(src, dst);
    if (auto it = route_cache_.find(key); it != route_cache_.end()) return it->second;
    return route_cache_.emplace(key, shortest_path(src, dst)).first->second;
  }

  bool reachable(const std::string& src, const std::string& dst) const {
    try {
      route(src, dst);
      return true;
    } catch (const RouteError&) {
      return false;
    }
  }

  void reconfigure_link(const std::string& id, double capacity) {
    auto it = links_.find(id);
    if (it == links_.end()) throw ConfigError("unknown link '" + id + "'");
    if (!(capacity > 0.0) || !std::isfinite(capacity))
      throw ConfigError("link '" + id + "' capacity must be positive");
    it->second.capacity = capacity;
  }

  void set_vo_share(const std::string& ce_id, const std::string& vo, double share) {
    auto it = ces_.find(ce_id);
    if (it == ces_.end()) throw ConfigError("unknown CE '" + ce_id + "'");
    if (share < 0.0) throw ConfigError("VO share must be nonnegative");
    auto shares = it->second.vo_shares;
    shares[vo] = share;
    double total = 0.0;
    for (const auto& [_, s] : shares) total += s;
    if (total > 1.0 + 1e-12) throw ConfigError("VO shares on '" + ce_id + "' exceed 1");
    it->second.vo_shares = std::move(shares);
  }

  // Replica catalog --------------------------------------------------------

  std::vector<Replica> replica_lookup(const std::string& dataset) const {
    std::vector<Replica> out;
    auto it = catalog_.find(dataset);
    if (it == catalog_.end()) return out;
    for (const auto& [se, size] : it->second) out.push_back(Replica{dataset, se, size});
    return out;
  }

  bool has_replica(const std::string& dataset, const std::string& se) const {
    auto it = catalog_.find(dataset);
    return it != catalog_.end() && it->second.count(se) > 0;
  }

  void replica_place(const std::string& dataset, const std::string& se_id, Bytes size) {
    auto it = ses_.find(se_id);
    if (it == ses_.end()) throw ConfigError("unknown SE '" + se_id + "'");
    if (has_replica(dataset, se_id))
      throw IntegrityError("replica of '" + dataset + "' already on '" + se_id + "'");
    if (auto known = catalog_.find(dataset); known != catalog_.end() && !known->second.empty() &&
                                             known->second.begin()->second != size)
      throw IntegrityError("replica size of '" + dataset + "' disagrees with catalog");
    if (it->second.free() < size)
      throw PlacementError("SE '" + se_id + "' lacks room for '" + dataset + "'");
    catalog_[dataset][se_id] = size;
    it->second.used += size;
  }

  // `referenced` reports whether a pending job still needs the dataset.
  void replica_drop(const std::string& dataset, const std::string& se_id,
                    const std::function<bool(const std::string&)>& referenced = {}) {
    auto it = catalog_.find(dataset);
    if (it == catalog_.end() || !it->second.count(se_id))
      throw IntegrityError("no replica of '" + dataset + "' on '" + se_id + "'");
    if (it->second.size() == 1 && referenced && referenced(dataset))
      throw IntegrityError("cannot drop last replica of '" + dataset +
                           "' while a pending job references it");
    ses_.at(se_id).used -= it->second.at(se_id);
    it->second.erase(se_id);
    if (it->second.empty()) catalog_.erase(it);
  }

  const std::map<std::string, std::map<std::string, Bytes>>& catalog() const { return catalog_; }

  // used == sum of resident replica sizes on every SE.
  bool storage_conserved() const {
    std::map<std::string, Bytes> resident;
    for (const auto& [_, by_se] : catalog_)
      for (const auto& [se, size] : by_se) resident[se] += size;
    for (const auto& [id, se] : ses_) {
      if (se.used != resident[id] || se.used > se.capacity) return false;
    }
    return true;
  }

  // Structural checks; returns every problem found.
  std::vector<std::string> validate() const {
    std::vector<std::string> problems;
    for (const auto& [id, l] : links_) {
      if (!has(l.a)) problems.push_back("link '" + id + "': unknown endpoint '" + l.a + "'");
      if (!has(l.b)) problems.push_back("link '" + id + "': unknown endpoint '" + l.b + "'");
      if (!(l.capacity > 0.0)) problems.push_back("link '" + id + "': capacity must be positive");
      if (!(l.latency >= 0.0)) problems.push_back("link '" + id + "': latency must be >= 0");
    }
    for (const auto& [id, c] : ces_) {
      if (c.nodes < 1) problems.push_back("CE '" + id + "': needs at least one worker node");
      if (!(c.speed > 0.0)) problems.push_back("CE '" + id + "': speed must be positive");
      if (!(c.fe_overhead >= 0.0)) problems.push_back("CE '" + id + "': fe_overhead must be >= 0");
      double total = 0.0;
      for (const auto& [vo, s] : c.vo_shares) {
        if (s < 0.0) problems.push_back("CE '" + id + "': negative share for VO '" + vo + "'");
        total += s;
      }
      if (total > 1.0 + 1e-12) problems.push_back("CE '" + id + "': VO shares sum above 1");
      std::set<std::string> qnames;
      for (const auto& q : c.queues) {
        if (!qnames.insert(q.name).second)
          problems.push_back("CE '" + id + "': duplicate queue '" + q.name + "'");
        for (const auto& [who, w] : q.weights)
          if (!(w > 0.0))
            problems.push_back("CE '" + id + "' queue '" + q.name + "': weight for '" + who +
                               "' must be positive");
      }
    }
    if (!(reference_speed > 0.0)) problems.push_back("reference_speed must be positive");
    if (broker_site.empty() || !sites_.count(broker_site)) {
      problems.push_back("broker_site '" + broker_site + "' is not a known site");
    } else if (problems.empty()) {
      for (const auto& [sid, site] : sites_)
        for (const auto& ui : site.uis)
          if (!reachable(ui, broker_site))
            problems.push_back("UI '" + ui + "' has no path to the broker");
    }
    return problems;
  }

 private:
  template <typename Map>
  static const typename Map::mapped_type& lookup(const Map& m, const std::string& id,
                                                 const char* what) {
    auto it = m.find(id);
    if (it == m.end()) throw ConfigError(std::string("unknown ") + what + " '" + id + "'");
    return it->second;
  }

  void claim(const std::string& id, ComponentKind kind, const std::string& site) {
    if (kinds_.count(id) || links_.count(id)) throw ConfigError("duplicate id '" + id + "'");
    if (kind != ComponentKind::site && !sites_.count(site))
      throw ConfigError("component '" + id + "' refers to unknown site '" + site + "'");
    kinds_[id] = kind;
    site_of_[id] = site;
    route_cache_.clear();
  }

  Site& site_ref(const std::string& id) {
    auto it = sites_.find(id);
    if (it == sites_.end()) throw ConfigError("unknown site '" + id + "'");
    return it->second;
  }

  struct Hop {
    std::string node;
    const Link* link;  // nullptr for the implicit component-site attachment
  };

  std::vector<Hop> neighbours(const std::string& node) const {
    std::vector<Hop> out;
    const auto kind = kinds_.at(node);
    if (kind == ComponentKind::site) {
      const auto& s = sites_.at(node);
      for (const auto* group : {&s.uis, &s.ces, &s.ses})
        for (const auto& c : *group) out.push_back({c, nullptr});
    } else {
      out.push_back({site_of_.at(node), nullptr});
    }
    for (const auto& [id, l] : links_) {
      if (l.a == node && kinds_.count(l.b)) out.push_back({l.b, &l});
      if (l.b == node && kinds_.count(l.a)) out.push_back({l.a, &l});
    }
    return out;
  }

  std::vector<std::string> shortest_path(const std::string& src, const std::string& dst) const {
    using Label = std::pair<double, std::vector<std::string>>;
    std::map<std::string, Label> best;
    std::set<std::tuple<double, std::vector<std::string>, std::string>> frontier;
    best[src] = {0.0, {}};
    frontier.insert({0.0, {}, src});
    std::set<std::string> settled;
    while (!frontier.empty()) {
      auto [dist, path, node] = *frontier.begin();
      frontier.erase(frontier.begin());
      if (!settled.insert(node).second) continue;
      if (node == dst) return path;
      for (const auto& hop : neighbours(node)) {
        if (settled.count(hop.node)) continue;
        Label cand{dist, path};
        if (hop.link) {
          cand.first += hop.link->latency;
          cand.second.push_back(hop.link->id);
        }
        auto it = best.find(hop.node);
        if (it == best.end() || cand < it->second) {
          if (it != best.end())
            frontier.erase({it->second.first, it->second.second, hop.node});
          best[hop.node] = cand;
          frontier.insert({cand.first, cand.second, hop.node});
        }
      }
    }
    throw RouteError("no route from '" + src + "' to '" + dst + "'");
  }

  std::map<std::string, Site> sites_;
  std::map<std::string, ComputingElement> ces_;
  std::map<std::string, StorageElement> ses_;
  std::map<std::string, Link> links_;
  std::map<std::string, ComponentKind> kinds_;
  std::map<std::string, std::string> site_of_;
  std::map<std::string, std::map<std::string, Bytes>> catalog_;
  mutable std::map<std::pair<std::string, std::string>, std::vector<std::string>> route_cache_;
};

// Local batch system of one CE: named queues plus worker-node occupancy and
// node-level advance reservations.
struct QueueEntry {
  std::size_t job = kNoJob;
  std::string job_id;
  std::string user;
  std::string vo;
  double cpu = 0.0;
  int nodes = 1;
  double weight = 1.0;
  SimTime enqueued;
};

struct NodeReservation {
  std::uint64_t id = 0;
  SimTime start;
  SimTime end;
};

class CeState {
 public:
  CeState() = default;
  explicit CeState(const ComputingElement& ce)
      : queues_(ce.queues.size()), nodes_(static_cast<std::size_t>(ce.nodes)) {}

  // Empty queue name selects the CE's first queue.
  void enqueue(const ComputingElement& ce, const std::string& queue_name, QueueEntry entry) {
    std::size_t qi = 0;
    if (!queue_name.empty()) {
      qi = ce.queues.size();
      for (std::size_t i = 0; i < ce.queues.size(); ++i)
        if (ce.queues[i].name == queue_name) qi = i;
      if (qi == ce.queues.size())
        throw ConfigError("CE '" + ce.id + "' has no queue '" + queue_name + "'");
    }
    entry.weight = ce.queues[qi].weight_for(entry.user, entry.vo);
    queues_[qi].push_back(std::move(entry));
  }

  // Highest-priority job that may start now: weight, then enqueue time, then
  // job id. Jobs over their VO cap are skipped; a job short of free nodes
  // blocks everything behind it.
  std::optional<QueueEntry> next_job(const ComputingElement& ce, SimTime now) const {
    for (const QueueEntry* e : ordered()) {
      if (vo_busy(e->vo) + e->nodes > ce.vo_cap(e->vo)) continue;
      if (pick_nodes(now, e->nodes, ce.exec_time(e->cpu, e->nodes)).empty()) return std::nullopt;
      return *e;
    }
    return std::nullopt;
  }

  // Nodes (lowest index first) that are idle and stay clear of every
  // reservation for [now, now + duration). Empty when not enough exist.
  std::vector<int> pick_nodes(SimTime now, int count, double duration,
                              std::uint64_t reservation = 0) const {
    std::vector<int> picked;
    const SimTime until = now + duration;
    for (std::size_t i = 0; i < nodes_.size() && static_cast<int>(picked.size()) < count; ++i) {
      const auto& n = nodes_[i];
      if (n.job != kNoJob) continue;
      bool clear = true;
      for (const auto& r : n.reservations) {
        if (r.id == reservation) continue;
        if (!(until <= r.start || now >= r.end)) {
          clear = false;
          break;
        }
      }
      if (clear) picked.push_back(static_cast<int>(i));
    }
    if (static_cast<int>(picked.size()) < count) picked.clear();
    return picked;
  }

  void remove_queued(std::size_t job) {
    for (auto& q : queues_)
      std::erase_if(q, [job](const QueueEntry& e) { return e.job == job; });
  }

  void occupy(std::size_t job, const std::string& vo, const std::vector<int>& nodes,
              SimTime until) {
    for (int i : nodes) {
      auto& n = nodes_.at(static_cast<std::size_t>(i));
      if (n.job != kNoJob) throw IntegrityError("worker node already busy");
      n.job = job;
      n.busy_until = until;
    }
    vo_busy_[vo] += static_cast<int>(nodes.size());
    running_[job] = {vo, nodes};
  }

  void release(std::size_t job) {
    auto it = running_.find(job);
    if (it == running_.end()) throw IntegrityError("releasing a job that holds no nodes");
    for (int i : it->second.second) nodes_.at(static_cast<std::size_t>(i)).job = kNoJob;
    vo_busy_[it->second.first] -= static_cast<int>(it->second.second.size());
    running_.erase(it);
  }

  // Blocks `count` nodes for [start, end). Throws ReservationError on a past
  // window or when too few nodes are free of conflicts.
  std::vector<int> reserve(const ComputingElement& ce, SimTime now, int count, SimTime start,
                           SimTime end, std::uint64_t id) {
    if (!(start > now)) throw ReservationError("reservation window starts in the past");
    if (!(end > start)) throw ReservationError("reservation window is empty");
    if (count > ce.nodes) throw ReservationError("reservation needs more nodes than CE has");
    std::vector<int> picked;
    for (std::size_t i = 0; i < nodes_.size() && static_cast<int>(picked.size()) < count; ++i) {
      const auto& n = nodes_[i];
      if (n.job != kNoJob && n.busy_until > start) continue;
      bool clear = true;
      for (const auto& r : n.reservations)
        if (start < r.end && r.start < end) clear = false;
      if (clear) picked.push_back(static_cast<int>(i));
    }
    if (static_cast<int>(picked.size()) < count)
      throw ReservationError("reservation conflicts on CE '" + ce.id + "'");
    for (int i : picked)
      nodes_[static_cast<std::size_t>(i)].reservations.push_back(NodeReservation{id, start, end});
    return picked;
  }

  void cancel_reservation(std::uint64_t id) {
    for (auto& n : nodes_)
      std::erase_if(n.reservations, [id](const NodeReservation& r) { return r.id == id; });
  }

  // Reservations never overlap on one node.
  bool reservations_disjoint() const {
    for (const auto& n : nodes_)
      for (std::size_t a = 0; a < n.reservations.size(); ++a)
        for (std::size_t b = a + 1; b < n.reservations.size(); ++b)
          if (n.reservations[a].start < n.reservations[b].end &&
              n.reservations[b].start < n.reservations[a].end)
            return false;
    return true;
  }

  std::vector<const QueueEntry*> ordered() const {
    std::vector<const QueueEntry*> all;
    for (const auto& q : queues_)
      for (const auto& e : q) all.push_back(&e);
    std::sort(all.begin(), all.end(), [](const QueueEntry* a, const QueueEntry* b) {
      if (a->weight != b->weight) return a->weight > b->weight;
      if (a->enqueued != b->enqueued) return a->enqueued < b->enqueued;
      return a->job_id < b->job_id;
    });
    return all;
  }

  int total_nodes() const { return static_cast<int>(nodes_.size()); }
  int busy_nodes() const {
    return static_cast<int>(std::count_if(nodes_.begin(), nodes_.end(),
                                          [](const WorkerNode& n) { return n.job != kNoJob; }));
  }
  int idle_nodes() const { return total_nodes() - busy_nodes(); }
  int vo_busy(const std::string& vo) const {
    auto it = vo_busy_.find(vo);
    return it == vo_busy_.end() ? 0 : it->second;
  }
  std::size_t queued_count() const {
    std::size_t n = 0;
    for (const auto& q : queues_) n += q.size();
    return n;
  }
  std::size_t running_count() const { return running_.size(); }
  const std::map<std::size_t, std::pair<std::string, std::vector<int>>>& running() const {
    return running_;
  }
  SimTime busy_until(int node) const { return nodes_.at(static_cast<std::size_t>(node)).busy_until; }

 private:
  struct WorkerNode {
    std::size_t job = kNoJob;
    SimTime busy_until;
    std::vector<NodeReservation> reservations;
  };

  std::vector<std::vector<QueueEntry>> queues_;
  std::vector<WorkerNode> nodes_;
  std::map<std::string, int> vo_busy_;
  std::map<std::size_t, std::pair<std::string, std::vector<int>>> running_;
};

}  // namespace gridsim

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridsim/simulation.hpp"

namespace gridsim {

using json = nlohmann::json;

// One Poisson source. The rate ramps linearly from `rate` to `rate_end`
// over the active interval when `rate_end` is set.
struct GeneratorSpec {
  ApplicationProfile profile;
  double start = 0.0;
  std::optional<double> duration;  // unset: until the end of the run
  double rate = 0.0;
  std::optional<double> rate_end;
  GeneratorContext ctx;
};

// Agents of a minority game submit one job per round to the CE named by
// their chosen side.
struct MinorityGameSource {
  MinorityGameConfig game;
  int rounds = 10;
  double start = 0.0;
  double round_length = 60.0;
  std::string ce0;
  std::string ce1;
  double cpu = 60.0;
  std::string user = "mg";
  std::string vo = "mg";
  std::string ui;
  std::string id_prefix = "mg";
};

struct Scenario {
  json document;
  std::filesystem::path base_dir;
  GridTopology topology;
  std::vector<TimedJob> jobs;
  std::vector<GeneratorSpec> generators;
  std::optional<MinorityGameSource> minority_game;
  MatchPolicy policy;
  UtilityWeights utility;
  MetricConfig metrics;
  AccountingConfig accounting;
  std::optional<GridRLSettings> rl;
  std::uint64_t seed = 1;
  double duration = 3600.0;
  bool trace = true;

  std::vector<TimedJob> workload(std::uint64_t run_seed, double run_duration) const {
    std::vector<TimedJob> out = jobs;
    for (const auto& g : generators) {
      const double span = g.duration ? *g.duration : run_duration - g.start;
      if (!(span > 0.0)) continue;
      const double r0 = g.rate;
      const double r1 = g.rate_end.value_or(g.rate);
      const double t0 = g.start;
      auto rate = [=](double t) { return r0 + (r1 - r0) * (t - t0) / span; };
      auto batch = generate(g.profile, g.start, span, rate, std::max(r0, r1), run_seed, g.ctx);
      out.insert(out.end(), std::make_move_iterator(batch.begin()),
                 std::make_move_iterator(batch.end()));
    }
    if (minority_game) {
      const auto& mg = *minority_game;
      MinorityGame game(mg.game, run_seed);
      for (int r = 0; r < mg.rounds; ++r) {
        const double at = mg.start + r * mg.round_length;
        const auto round = game.step();
        for (std::size_t a = 0; a < round.choices.size(); ++a) {
          JobSpec s;
          s.id = mg.id_prefix + std::to_string(r) + "-" + std::to_string(a);
          s.user = mg.user;
          s.vo = mg.vo;
          s.cpu = mg.cpu;
          s.ui = mg.ui;
          s.pin.ce = round.choices[a] == 1 ? mg.ce1 : mg.ce0;
          out.push_back({SimTime(at), std::move(s)});
        }
      }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const TimedJob& a, const TimedJob& b) { return a.at < b.at; });
    return out;
  }

  SimulationConfig materialize(std::optional<std::uint64_t> seed_override = std::nullopt,
                               std::optional<double> duration_override = std::nullopt) const {
    SimulationConfig c;
    c.topology = topology;
    c.seed = seed_override.value_or(seed);
    c.duration = duration_override.value_or(duration);
    c.jobs = workload(c.seed, c.duration);
    c.policy = policy;
    c.utility = utility;
    c.metrics = metrics;
    c.accounting = accounting;
    c.rl = rl;
    c.trace = trace;
    return c;
  }
};

namespace detail {

// Field reader that records every problem with its JSON path instead of
// stopping at the first.
class Reader {
 public:
  std::vector<std::string> errors;

  void error(const std::string& path, const std::string& msg) { errors.push_back(path + ": " + msg); }

  const json* child(const json& obj, const std::string& key, const std::string& path, bool required) {
    if (!obj.is_object()) return nullptr;
    auto it = obj.find(key);
    if (it == obj.end()) {
      if (required) error(path + "/" + key, "missing field");
      return nullptr;
    }
    return &*it;
  }

  template <typename T>
  std::optional<T> opt(const json& obj, const std::string& key, const std::string& path) {
    const json* v = child(obj, key, path, false);
    if (!v) return std::nullopt;
    return convert<T>(*v, path + "/" + key);
  }

  template <typename T>
  T get(const json& obj, const std::string& key, const std::string& path, T fallback) {
    return opt<T>(obj, key, path).value_or(std::move(fallback));
  }

  template <typename T>
  T req(const json& obj, const std::string& key, const std::string& path) {
    const json* v = child(obj, key, path, true);
    if (!v) return T{};
    return convert<T>(*v, path + "/" + key).value_or(T{});
  }

  double nonneg(const json& obj, const std::string& key, const std::string& path, double fallback) {
    const double v = get<double>(obj, key, path, fallback);
    if (!(v >= 0.0)) error(path + "/" + key, "must be >= 0");
    return v;
  }

  double positive(const json& obj, const std::string& key, const std::string& path, double fallback) {
    const double v = get<double>(obj, key, path, fallback);
    if (!(v > 0.0)) error(path + "/" + key, "must be > 0");
    return v;
  }

  const json& array(const json& obj, const std::string& key, const std::string& path) {
    static const json empty = json::array();
    const json* v = child(obj, key, path, false);
    if (!v) return empty;
    if (!v->is_array()) {
      error(path + "/" + key, "expected an array");
      return empty;
    }
    return *v;
  }

  const json& object(const json& obj, const std::string& key, const std::string& path) {
    static const json empty = json::object();
    const json* v = child(obj, key, path, false);
    if (!v) return empty;
    if (!v->is_object()) {
      error(path + "/" + key, "expected an object");
      return empty;
    }
    return *v;
  }

 private:
  template <typename T>
  std::optional<T> convert(const json& v, const std::string& path) {
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw std::invalid_argument("number");
        return v.get<double>();
      } else if constexpr (std::is_same_v<T, int>) {
        if (!v.is_number_integer()) throw std::invalid_argument("integer");
        return v.get<int>();
      } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
          throw std::invalid_argument("nonnegative integer");
        return v.get<std::uint64_t>();
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("boolean");
        return v.get<bool>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw std::invalid_argument("string");
        return v.get<std::string>();
      } else {
        return v.get<T>();
      }
    } catch (const std::invalid_argument& e) {
      error(path, std::string("expected a ") + e.what());
    } catch (const json::exception&) {
      error(path, "has the wrong type");
    }
    return std::nullopt;
  }
};

inline Histogram read_histogram(Reader& rd, const json& v, const std::string& path) {
  try {
    if (v.is_number()) {
      if (v.get<double>() < 0.0) rd.error(path, "must be >= 0");
      return Histogram::point(v.get<double>());
    }
    if (v.is_object() && v.contains("lo")) {
      const double lo = rd.req<double>(v, "lo", path);
      const double hi = rd.req<double>(v, "hi", path);
      if (!(lo >= 0.0) || !(hi >= lo)) {
        rd.error(path, "needs 0 <= lo <= hi");
        return Histogram::point(0.0);
      }
      return Histogram({{lo, hi, 1.0}});
    }
    if (v.is_array()) {
      std::vector<Histogram::Bin> bins;
      for (std::size_t i = 0; i < v.size(); ++i) {
        const auto p = path + "/" + std::to_string(i);
        Histogram::Bin b;
        b.lo = rd.req<double>(v[i], "lo", p);
        b.hi = rd.get<double>(v[i], "hi", p, b.lo);
        b.mass = rd.get<double>(v[i], "mass", p, 1.0);
        if (b.lo < 0.0) rd.error(p, "values must be >= 0");
        bins.push_back(b);
      }
      return Histogram(std::move(bins));
    }
    rd.error(path, "expected a number, {lo, hi} or a list of bins");
  } catch (const FitError& e) {
    rd.error(path, e.what());
  }
  return Histogram::point(0.0);
}

inline ApplicationProfile read_profile(Reader& rd, const json& g, const std::string& path,
                                       const std::filesystem::path& base) {
  if (auto file = rd.opt<std::string>(g, "measurements", path)) {
    const auto full = base / *file;
    std::ifstream in(full);
    if (!in) {
      rd.error(path + "/measurements", "cannot open '" + full.string() + "'");
      return {};
    }
    try {
      return fit_profile(read_measurements(in));
    } catch (const FitError& e) {
      rd.error(path + "/measurements", e.what());
      return {};
    }
  }
  const json* p = rd.child(g, "profile", path, true);
  if (!p) return {};
  const auto pp = path + "/profile";
  ApplicationProfile prof;
  const auto& mix = rd.object(*p, "mix", pp);
  double total = 0.0;
  for (const auto& [name, w] : mix.items()) {
    auto cls = parse_job_class(name);
    if (!cls) {
      rd.error(pp + "/mix/" + name, "unknown job class");
      continue;
    }
    if (!w.is_number() || w.get<double>() < 0.0) {
      rd.error(pp + "/mix/" + name, "weight must be a number >= 0");
      continue;
    }
    prof.mix[*cls] = w.get<double>();
    total += w.get<double>();
  }
  if (mix.empty()) prof.mix[JobClass::standard] = total = 1.0;
  if (!(total > 0.0)) rd.error(pp + "/mix", "weights sum to zero");
  for (auto& [_, w] : prof.mix) w /= total > 0.0 ? total : 1.0;
  auto hist = [&](const char* key, double fallback) {
    const json* v = rd.child(*p, key, pp, false);
    return v ? read_histogram(rd, *v, pp + "/" + key) : Histogram::point(fallback);
  };
  prof.cpu = hist("cpu", 60.0);
  prof.input_bytes = hist("input_bytes", 0.0);
  prof.output_bytes = hist("output_bytes", 0.0);
  prof.interarrival = hist("interarrival", 60.0);
  prof.chain_length = hist("chain_length", 3.0);
  return prof;
}

inline std::optional<ActionType> parse_action_type(const std::string& s) {
  if (s == "noop") return ActionType::noop;
  if (s == "shift-bandwidth") return ActionType::shift_bandwidth;
  if (s == "move-replica") return ActionType::move_replica;
  if (s == "shift-vo-share") return ActionType::shift_vo_share;
  return std::nullopt;
}

inline void read_topology(Reader& rd, const json& t, Scenario& sc) {
  const std::string P = "/topology";
  auto& topo = sc.topology;
  topo.reference_speed = rd.positive(t, "reference_speed", P, 1.0);
  topo.broker_site = rd.req<std::string>(t, "broker_site", P);
  auto guarded = [&](const std::string& path, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      rd.error(path, e.what());
    }
  };
  const auto& sites = rd.array(t, "sites", P);
  if (sites.empty()) rd.error(P + "/sites", "at least one site is required");
  for (std::size_t i = 0; i < sites.size(); ++i) {
    const auto p = P + "/sites/" + std::to_string(i);
    if (!sites[i].is_string()) {
      rd.error(p, "expected a site id");
      continue;
    }
    guarded(p, [&] { topo.add_site(sites[i].get<std::string>()); });
  }
  auto need_site = [&](const std::string& p, const std::string& site) {
    if (!topo.sites().count(site)) {
      rd.error(p + "/site", "unknown site '" + site + "'");
      return false;
    }
    return true;
  };
  const auto& uis = rd.array(t, "uis", P);
  for (std::size_t i = 0; i < uis.size(); ++i) {
    const auto p = P + "/uis/" + std::to_string(i);
    const auto id = rd.req<std::string>(uis[i], "id", p);
    const auto site = rd.req<std::string>(uis[i], "site", p);
    if (need_site(p, site)) guarded(p, [&] { topo.add_ui(id, site); });
  }
  const auto& ces = rd.array(t, "ces", P);
  for (std::size_t i = 0; i < ces.size(); ++i) {
    const auto p = P + "/ces/" + std::to_string(i);
    const auto& c = ces[i];
    ComputingElement ce;
    ce.id = rd.req<std::string>(c, "id", p);
    ce.site = rd.req<std::string>(c, "site", p);
    ce.nodes = rd.get<int>(c, "nodes", p, 1);
    if (ce.nodes < 1) rd.error(p + "/nodes", "must be >= 1");
    ce.speed = rd.positive(c, "speed", p, 1.0);
    ce.fe_overhead = rd.nonneg(c, "fe_overhead", p, 0.0);
    const auto& queues = rd.array(c, "queues", p);
    for (std::size_t q = 0; q < queues.size(); ++q) {
      const auto qp = p + "/queues/" + std::to_string(q);
      NamedQueue nq;
      nq.name = rd.req<std::string>(queues[q], "name", qp);
      const auto disc = rd.get<std::string>(queues[q], "discipline", qp, "fifo");
      if (disc == "fifo")
        nq.discipline = QueueDiscipline::fifo;
      else if (disc == "priority")
        nq.discipline = QueueDiscipline::priority;
      else
        rd.error(qp + "/discipline", "expected 'fifo' or 'priority'");
      for (const auto& [who, w] : rd.object(queues[q], "weights", qp).items()) {
        if (!w.is_number() || !(w.get<double>() > 0.0))
          rd.error(qp + "/weights/" + who, "must be a number > 0");
        else
          nq.weights[who] = w.get<double>();
      }
      ce.queues.push_back(std::move(nq));
    }
    for (const auto& [vo, s] : rd.object(c, "vo_shares", p).items()) {
      if (!s.is_number() || s.get<double>() < 0.0)
        rd.error(p + "/vo_shares/" + vo, "must be a number >= 0");
      else
        ce.vo_shares[vo] = s.get<double>();
    }
    if (need_site(p, ce.site)) guarded(p, [&] { topo.add_ce(std::move(ce)); });
  }
  const auto& ses = rd.array(t, "ses", P);
  for (std::size_t i = 0; i < ses.size(); ++i) {
    const auto p = P + "/ses/" + std::to_string(i);
    StorageElement se;
    se.id = rd.req<std::string>(ses[i], "id", p);
    se.site = rd.req<std::string>(ses[i], "site", p);
    se.capacity = rd.req<std::uint64_t>(ses[i], "capacity", p);
    if (need_site(p, se.site)) guarded(p, [&] { topo.add_se(std::move(se)); });
  }
  const auto& links = rd.array(t, "links", P);
  for (std::size_t i = 0; i < links.size(); ++i) {
    const auto p = P + "/links/" + std::to_string(i);
    Link l;
    l.id = rd.req<std::string>(links[i], "id", p);
    l.a = rd.req<std::string>(links[i], "a", p);
    l.b = rd.req<std::string>(links[i], "b", p);
    l.capacity = rd.positive(links[i], "capacity", p, 1.0);
    l.latency = rd.nonneg(links[i], "latency", p, 0.0);
    for (const auto& end : {l.a, l.b})
      if (!end.empty() && !topo.has(end)) rd.error(p, "unknown endpoint '" + end + "'");
    guarded(p, [&] { topo.add_link(std::move(l)); });
  }
  const auto& reps = rd.array(t, "replicas", P);
  for (std::size_t i = 0; i < reps.size(); ++i) {
    const auto p = P + "/replicas/" + std::to_string(i);
    const auto ds = rd.req<std::string>(reps[i], "dataset", p);
    const auto se = rd.req<std::string>(reps[i], "se", p);
    const auto size = rd.req<std::uint64_t>(reps[i], "size", p);
    if (!topo.ses().count(se)) {
      rd.error(p + "/se", "unknown SE '" + se + "'");
      continue;
    }
    try {
      topo.replica_place(ds, se, size);
    } catch (const Error& e) {
      rd.error(p, e.what());
    }
  }
  if (rd.errors.empty())
    for (const auto& problem : topo.validate()) rd.error(P, problem);
}

inline JobSpec read_job(Reader& rd, const json& j, const std::string& p) {
  JobSpec s;
  s.id = rd.req<std::string>(j, "id", p);
  s.user = rd.get<std::string>(j, "user", p, "user");
  s.vo = rd.get<std::string>(j, "vo", p, "vo");
  const auto cls = rd.get<std::string>(j, "class", p, "standard");
  if (auto c = parse_job_class(cls))
    s.job_class = *c;
  else
    rd.error(p + "/class", "unknown job class '" + cls + "'");
  s.cpu = rd.nonneg(j, "cpu", p, 0.0);
  s.required_cpus = rd.get<int>(j, "required_cpus", p, 1);
  if (s.required_cpus < 1) rd.error(p + "/required_cpus", "must be >= 1");
  s.inputs = rd.get<std::vector<std::string>>(j, "inputs", p, {});
  s.output_bytes = rd.get<std::uint64_t>(j, "output_bytes", p, 0);
  s.min_replicas = rd.get<int>(j, "min_replicas", p, 1);
  if (s.min_replicas < 1) rd.error(p + "/min_replicas", "must be >= 1");
  s.pin.ce = rd.opt<std::string>(j, "pin_ce", p);
  s.pin.se_for_dataset = rd.get<std::map<std::string, std::string>>(j, "pin_se", p, {});
  s.deps = rd.get<std::vector<std::string>>(j, "deps", p, {});
  s.ui = rd.get<std::string>(j, "ui", p, "");
  s.queue = rd.get<std::string>(j, "queue", p, "");
  const auto& res = rd.object(j, "reservation", p);
  if (!res.empty()) {
    ReservationWindow w;
    w.start = rd.nonneg(res, "start", p + "/reservation", 0.0);
    w.end = rd.req<double>(res, "end", p + "/reservation");
    if (!(w.end > w.start)) rd.error(p + "/reservation", "end must be after start");
    s.reservation = w;
  }
  return s;
}

inline void check_job_refs(Reader& rd, const Scenario& sc, const JobSpec& s, const std::string& p,
                           const std::set<std::string>& all_ids) {
  const auto& topo = sc.topology;
  if (s.pin.ce && !topo.ces().count(*s.pin.ce)) rd.error(p + "/pin_ce", "unknown CE '" + *s.pin.ce + "'");
  for (const auto& [ds, se] : s.pin.se_for_dataset)
    if (!topo.ses().count(se)) rd.error(p + "/pin_se/" + ds, "unknown SE '" + se + "'");
  if (!s.ui.empty() && (!topo.has(s.ui) || topo.kind_of(s.ui) != ComponentKind::ui))
    rd.error(p + "/ui", "unknown UI '" + s.ui + "'");
  for (const auto& d : s.deps)
    if (!all_ids.count(d)) rd.error(p + "/deps", "unknown job '" + d + "'");
  for (const auto& ds : s.inputs) {
    const bool produced = std::any_of(s.deps.begin(), s.deps.end(),
                                      [&](const std::string& d) { return ds == d + ".out"; });
    if (!produced && topo.replica_lookup(ds).empty())
      rd.error(p + "/inputs", "unknown dataset '" + ds + "'");
  }
  if (s.pin.ce && topo.ces().count(*s.pin.ce)) {
    const auto& ce = topo.ce(*s.pin.ce);
    if (!s.queue.empty() && !ce.find_queue(s.queue))
      rd.error(p + "/queue", "CE '" + ce.id + "' has no queue '" + s.queue + "'");
  }
}

inline GeneratorSpec read_generator(Reader& rd, const json& g, const std::string& p, Scenario& sc) {
  GeneratorSpec gen;
  gen.profile = read_profile(rd, g, p, sc.base_dir);
  gen.start = rd.nonneg(g, "start", p, 0.0);
  gen.duration = rd.opt<double>(g, "duration", p);
  if (gen.duration && !(*gen.duration > 0.0)) rd.error(p + "/duration", "must be > 0");
  if (auto r = rd.opt<double>(g, "rate", p)) {
    gen.rate = *r;
  } else {
    const double gap = gen.profile.interarrival.empty() ? 0.0 : gen.profile.interarrival.mean();
    gen.rate = gap > 0.0 ? 1.0 / gap : 0.0;
  }
  if (!(gen.rate >= 0.0)) rd.error(p + "/rate", "must be >= 0");
  gen.rate_end = rd.opt<double>(g, "rate_end", p);
  if (gen.rate_end && !(*gen.rate_end >= 0.0)) rd.error(p + "/rate_end", "must be >= 0");

  auto& ctx = gen.ctx;
  const auto& topo = sc.topology;
  ctx.id_prefix = rd.get<std::string>(g, "id_prefix", p, "j");
  const auto& subs = rd.array(g, "submitters", p);
  if (!subs.empty()) ctx.submitters.clear();
  for (std::size_t i = 0; i < subs.size(); ++i) {
    const auto sp = p + "/submitters/" + std::to_string(i);
    SubmitterShare s;
    s.user = rd.req<std::string>(subs[i], "user", sp);
    s.vo = rd.req<std::string>(subs[i], "vo", sp);
    s.weight = rd.positive(subs[i], "weight", sp, 1.0);
    ctx.submitters.push_back(std::move(s));
  }
  ctx.uis = rd.get<std::vector<std::string>>(g, "uis", p, {});
  for (const auto& ui : ctx.uis)
    if (!topo.has(ui) || topo.kind_of(ui) != ComponentKind::ui)
      rd.error(p + "/uis", "unknown UI '" + ui + "'");
  if (rd.child(g, "datasets", p, false)) {
    auto ids = rd.get<std::vector<std::string>>(g, "datasets", p, {});
    for (const auto& id : ids) {
      auto reps = topo.replica_lookup(id);
      if (reps.empty())
        rd.error(p + "/datasets", "unknown dataset '" + id + "'");
      else
        ctx.datasets.push_back({id, reps.front().size});
    }
  } else {
    for (const auto& [id, by_se] : topo.catalog()) ctx.datasets.push_back({id, by_se.begin()->second});
  }
  ctx.parallel_cpus = rd.get<std::vector<int>>(g, "parallel_cpus", p, {2});
  if (ctx.parallel_cpus.empty()) rd.error(p + "/parallel_cpus", "must not be empty");
  for (int n : ctx.parallel_cpus)
    if (n < 1) rd.error(p + "/parallel_cpus", "entries must be >= 1");
  for (const auto& [ce, w] : rd.object(g, "pin_weights", p).items()) {
    if (!topo.ces().count(ce)) rd.error(p + "/pin_weights/" + ce, "unknown CE '" + ce + "'");
    if (!w.is_number() || w.get<double>() < 0.0)
      rd.error(p + "/pin_weights/" + ce, "must be a number >= 0");
    else
      ctx.pin_weights[ce] = w.get<double>();
  }
  ctx.producer_ce = rd.opt<std::string>(g, "producer_ce", p);
  if (ctx.producer_ce && !topo.ces().count(*ctx.producer_ce))
    rd.error(p + "/producer_ce", "unknown CE '" + *ctx.producer_ce + "'");
  ctx.reservation_fraction = rd.get<double>(g, "reservation_fraction", p, 0.0);
  if (!(ctx.reservation_fraction >= 0.0 && ctx.reservation_fraction <= 1.0))
    rd.error(p + "/reservation_fraction", "must lie in [0, 1]");
  ctx.reservation_lead = rd.nonneg(g, "reservation_lead", p, 600.0);
  ctx.reservation_slack = rd.positive(g, "reservation_slack", p, 2.0);
  ctx.producer_cpu_scale = rd.positive(g, "producer_cpu_scale", p, 1.0);
  if (gen.profile.mix.count(JobClass::data_intensive) && gen.profile.mix.at(JobClass::data_intensive) > 0 &&
      ctx.datasets.empty())
    rd.error(p, "data-intensive jobs need at least one dataset");
  return gen;
}

inline void read_workload(Reader& rd, const json& w, Scenario& sc) {
  const std::string P = "/workload";
  const auto& jobs = rd.array(w, "jobs", P);
  std::set<std::string> ids;
  std::vector<std::pair<JobSpec, std::string>> specs;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto p = P + "/jobs/" + std::to_string(i);
    auto s = read_job(rd, jobs[i], p);
    const double at = rd.nonneg(jobs[i], "at", p, 0.0);
    if (!ids.insert(s.id).second) rd.error(p + "/id", "duplicate job id '" + s.id + "'");
    sc.jobs.push_back({SimTime(at), s});
    specs.emplace_back(std::move(s), p);
  }
  for (const auto& [s, p] : specs) check_job_refs(rd, sc, s, p, ids);
  std::vector<JobSpec> plain;
  for (const auto& [s, _] : specs) plain.push_back(s);
  if (!dependencies_acyclic(plain)) rd.error(P + "/jobs", "job dependencies form a cycle");

  const auto& gens = rd.array(w, "generators", P);
  std::set<std::string> prefixes;
  for (std::size_t i = 0; i < gens.size(); ++i) {
    const auto p = P + "/generators/" + std::to_string(i);
    auto g = read_generator(rd, gens[i], p, sc);
    if (!prefixes.insert(g.ctx.id_prefix).second)
      rd.error(p + "/id_prefix", "duplicate id prefix '" + g.ctx.id_prefix + "'");
    sc.generators.push_back(std::move(g));
  }
  if (const json* mg = rd.child(w, "minority_game", P, false)) {
    const auto p = P + "/minority_game";
    MinorityGameSource src;
    src.game.agents = rd.get<int>(*mg, "agents", p, 21);
    src.game.memory = rd.get<int>(*mg, "memory", p, 3);
    src.game.strategies = rd.get<int>(*mg, "strategies", p, 2);
    try {
      src.game.validate();
    } catch (const ConfigError& e) {
      rd.error(p, e.what());
    }
    src.rounds = rd.get<int>(*mg, "rounds", p, 10);
    if (src.rounds < 0) rd.error(p + "/rounds", "must be >= 0");
    src.start = rd.nonneg(*mg, "start", p, 0.0);
    src.round_length = rd.positive(*mg, "round_length", p, 60.0);
    const auto ces = rd.req<std::vector<std::string>>(*mg, "ces", p);
    if (ces.size() != 2) {
      rd.error(p + "/ces", "exactly two CEs expected");
    } else {
      src.ce0 = ces[0];
      src.ce1 = ces[1];
      for (const auto& c : ces)
        if (!sc.topology.ces().count(c)) rd.error(p + "/ces", "unknown CE '" + c + "'");
    }
    src.cpu = rd.nonneg(*mg, "cpu", p, 60.0);
    src.user = rd.get<std::string>(*mg, "user", p, "mg");
    src.vo = rd.get<std::string>(*mg, "vo", p, "mg");
    src.ui = rd.get<std::string>(*mg, "ui", p, "");
    if (!src.ui.empty() && !sc.topology.has(src.ui)) rd.error(p + "/ui", "unknown UI '" + src.ui + "'");
    src.id_prefix = rd.get<std::string>(*mg, "id_prefix", p, "mg");
    sc.minority_game = std::move(src);
  }
}

inline void read_broker(Reader& rd, const json& b, Scenario& sc) {
  const std::string P = "/broker";
  auto& pol = sc.policy;
  const auto mode = rd.get<std::string>(b, "mode", P, "free-choice");
  if (auto m = parse_match_mode(mode))
    pol.mode = *m;
  else
    rd.error(P + "/mode", "unknown mode '" + mode + "'");
  const auto& w = rd.object(b, "weights", P);
  pol.w_queue = rd.nonneg(w, "queue", P + "/weights", pol.w_queue);
  pol.w_transfer = rd.nonneg(w, "transfer", P + "/weights", pol.w_transfer);
  pol.w_execution = rd.nonneg(w, "execution", P + "/weights", pol.w_execution);
  pol.w_price = rd.nonneg(w, "price", P + "/weights", pol.w_price);
  pol.is_refresh = rd.nonneg(b, "is_refresh", P, pol.is_refresh);
  const auto obj = rd.get<std::string>(b, "objective", P, "mean-turnaround");
  if (obj == "mean-turnaround")
    pol.objective = BatchObjective::mean_turnaround;
  else if (obj == "makespan")
    pol.objective = BatchObjective::makespan;
  else
    rd.error(P + "/objective", "expected 'mean-turnaround' or 'makespan'");
  pol.oracle_limit = rd.get<std::uint64_t>(b, "oracle_limit", P, pol.oracle_limit);
  if (!pol.valid()) rd.error(P + "/weights", "at least one weight must be positive");
}

inline void read_utility(Reader& rd, const json& u, Scenario& sc) {
  const std::string P = "/utility";
  auto& w = sc.utility;
  w.queue = rd.nonneg(u, "queue", P, w.queue);
  w.transfer = rd.nonneg(u, "transfer", P, w.transfer);
  w.execution = rd.nonneg(u, "execution", P, w.execution);
  w.cpu = rd.nonneg(u, "cpu", P, w.cpu);
  w.bytes = rd.nonneg(u, "bytes", P, w.bytes);
  w.storage = rd.nonneg(u, "storage", P, w.storage);
  if (!w.valid()) rd.error(P, "at least one weight must be positive");
}

inline void read_metrics(Reader& rd, const json& m, Scenario& sc) {
  const std::string P = "/metrics";
  auto& mc = sc.metrics;
  mc.window = rd.positive(m, "window", P, mc.window);
  mc.subsystems = rd.get<std::vector<std::string>>(m, "subsystems", P, {});
  std::set<std::string> seen;
  for (const auto& id : mc.subsystems) {
    if (!seen.insert(id).second) rd.error(P + "/subsystems", "duplicate subsystem '" + id + "'");
    const bool known = sc.topology.ces().count(id) || sc.topology.ses().count(id) ||
                       sc.topology.has_link(id);
    if (!known) rd.error(P + "/subsystems", "unknown CE, SE or link '" + id + "'");
  }
  if (mc.subsystems.empty() && sc.topology.ces().empty()) rd.error(P + "/subsystems", "no subsystems");
  mc.renyi_orders = rd.get<std::vector<double>>(m, "renyi_orders", P, mc.renyi_orders);
  for (double q : mc.renyi_orders)
    if (!(q >= 0.0)) rd.error(P + "/renyi_orders", "orders must be >= 0");
  mc.thresholds.cv_max = rd.nonneg(m, "cv_max", P, mc.thresholds.cv_max);
  mc.thresholds.drift_max = rd.nonneg(m, "drift_max", P, mc.thresholds.drift_max);
  mc.flow.theta = rd.get<double>(m, "theta", P, mc.flow.theta);
  if (!(mc.flow.theta > 0.0 && mc.flow.theta < 1.0)) rd.error(P + "/theta", "must lie in (0, 1)");
  mc.flow.persistence = rd.get<int>(m, "persistence", P, mc.flow.persistence);
  if (mc.flow.persistence < 1) rd.error(P + "/persistence", "must be >= 1");
  mc.flow.lambda = rd.get<double>(m, "lambda", P, mc.flow.lambda);
  if (!(mc.flow.lambda > 0.0 && mc.flow.lambda <= 1.0)) rd.error(P + "/lambda", "must lie in (0, 1]");
}

inline void read_accounting(Reader& rd, const json& a, Scenario& sc) {
  const std::string P = "/accounting";
  auto& ac = sc.accounting;
  ac.period = rd.positive(a, "period", P, ac.period);
  const auto& pr = rd.object(a, "prices", P);
  ac.prices.cpu = rd.nonneg(pr, "cpu", P + "/prices", 0.0);
  ac.prices.byte = rd.nonneg(pr, "byte", P + "/prices", 0.0);
  ac.prices.storage = rd.nonneg(pr, "storage", P + "/prices", 0.0);
  ac.prices.utility = rd.nonneg(pr, "utility", P + "/prices", 0.0);
  const auto& quotas = rd.array(a, "quotas", P);
  std::set<std::string> subjects;
  for (std::size_t i = 0; i < quotas.size(); ++i) {
    const auto p = P + "/quotas/" + std::to_string(i);
    Quota q;
    q.subject = rd.req<std::string>(quotas[i], "subject", p);
    if (q.subject.rfind("user:", 0) != 0 && q.subject.rfind("vo:", 0) != 0)
      rd.error(p + "/subject", "must start with 'user:' or 'vo:'");
    if (!subjects.insert(q.subject).second) rd.error(p + "/subject", "duplicate quota subject");
    q.cpu_seconds = rd.opt<double>(quotas[i], "cpu_seconds", p);
    q.bytes = rd.opt<double>(quotas[i], "bytes", p);
    q.money = rd.opt<double>(quotas[i], "money", p);
    for (const auto& cap : {q.cpu_seconds, q.bytes, q.money})
      if (cap && !(*cap >= 0.0)) rd.error(p, "caps must be >= 0");
    ac.quotas.push_back(std::move(q));
  }
}

inline void read_optimizer(Reader& rd, const json& o, Scenario& sc) {
  const std::string P = "/optimizer/rl";
  const json* r = rd.child(o, "rl", "/optimizer", false);
  if (!r) return;
  GridRLSettings s;
  s.learning.alpha = rd.get<double>(*r, "alpha", P, s.learning.alpha);
  s.learning.gamma = rd.get<double>(*r, "gamma", P, s.learning.gamma);
  s.learning.epsilon_start = rd.get<double>(*r, "epsilon_start", P, s.learning.epsilon_start);
  s.learning.epsilon_end = rd.get<double>(*r, "epsilon_end", P, s.learning.epsilon_end);
  s.episode_length = rd.positive(*r, "episode_length", P, s.episode_length);
  s.features = rd.get<std::vector<std::string>>(*r, "features", P, {});
  for (const auto& f : s.features)
    if (!sc.topology.ces().count(f) && !sc.topology.ses().count(f) && !sc.topology.has_link(f))
      rd.error(P + "/features", "unknown CE, SE or link '" + f + "'");
  s.level_edges = rd.get<std::vector<double>>(*r, "level_edges", P, s.level_edges);
  const auto& acts = rd.array(*r, "actions", P);
  for (std::size_t i = 0; i < acts.size(); ++i) {
    const auto p = P + "/actions/" + std::to_string(i);
    ReconfigurationAction a;
    const auto type = rd.get<std::string>(acts[i], "type", p, "noop");
    if (auto t = parse_action_type(type))
      a.type = *t;
    else
      rd.error(p + "/type", "unknown action type '" + type + "'");
    a.from = rd.get<std::string>(acts[i], "from", p, "");
    a.to = rd.get<std::string>(acts[i], "to", p, "");
    a.dataset = rd.get<std::string>(acts[i], "dataset", p, "");
    a.ce = rd.get<std::string>(acts[i], "ce", p, "");
    a.quantum = rd.get<double>(acts[i], "quantum", p, 0.0);
    const auto& topo = sc.topology;
    if (a.type == ActionType::shift_bandwidth) {
      for (const auto& l : {a.from, a.to})
        if (!topo.has_link(l)) rd.error(p, "unknown link '" + l + "'");
      if (!(a.quantum > 0.0)) rd.error(p + "/quantum", "must be > 0");
    } else if (a.type == ActionType::move_replica) {
      for (const auto& se : {a.from, a.to})
        if (!topo.ses().count(se)) rd.error(p, "unknown SE '" + se + "'");
      if (topo.replica_lookup(a.dataset).empty())
        rd.error(p + "/dataset", "unknown dataset '" + a.dataset + "'");
    } else if (a.type == ActionType::shift_vo_share) {
      if (!topo.ces().count(a.ce)) rd.error(p + "/ce", "unknown CE '" + a.ce + "'");
      if (!(a.quantum > 0.0)) rd.error(p + "/quantum", "must be > 0");
    }
    s.actions.push_back(std::move(a));
  }
  if (s.actions.empty()) s.actions.push_back(ReconfigurationAction{});
  try {
    s.validate();
  } catch (const ConfigError& e) {
    rd.error(P, e.what());
  }
  sc.rl = std::move(s);
}

}  // namespace detail

// Parses and validates a scenario document; throws ValidationError listing
// every problem found.
inline Scenario parse_scenario(const json& doc, const std::filesystem::path& base_dir = {}) {
  detail::Reader rd;
  Scenario sc;
  sc.document = doc;
  sc.base_dir = base_dir;
  if (!doc.is_object()) throw ValidationError({"/: scenario must be an object"});
  static const std::set<std::string> known{"name",    "description", "seed",       "duration",
                                           "trace",   "topology",    "workload",   "broker",
                                           "utility", "metrics",     "accounting", "optimizer"};
  for (const auto& [k, _] : doc.items())
    if (!known.count(k)) rd.error("/" + k, "unknown top-level field");
  sc.seed = rd.get<std::uint64_t>(doc, "seed", "", 1);
  sc.duration = rd.nonneg(doc, "duration", "", 3600.0);
  sc.trace = rd.get<bool>(doc, "trace", "", true);
  const json* topo = rd.child(doc, "topology", "", true);
  if (topo && !topo->is_object()) {
    rd.error("/topology", "expected an object");
    topo = nullptr;
  }
  if (topo) detail::read_topology(rd, *topo, sc);
  const bool topo_ok = rd.errors.empty();
  if (topo_ok) {
    detail::read_workload(rd, rd.object(doc, "workload", ""), sc);
    detail::read_metrics(rd, rd.object(doc, "metrics", ""), sc);
    detail::read_optimizer(rd, rd.object(doc, "optimizer", ""), sc);
  }
  detail::read_broker(rd, rd.object(doc, "broker", ""), sc);
  detail::read_utility(rd, rd.object(doc, "utility", ""), sc);
  detail::read_accounting(rd, rd.object(doc, "accounting", ""), sc);
  if (!rd.errors.empty()) throw ValidationError(std::move(rd.errors));
  return sc;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError({path.string() + ": cannot open scenario file"});
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError({path.string() + ": " + e.what()});
  }
  return parse_scenario(doc, path.parent_path());
}

}  // namespace gridsim

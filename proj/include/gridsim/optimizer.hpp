#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "gridsim/error.hpp"
#include "gridsim/grid_model.hpp"
#include "gridsim/rng.hpp"

namespace gridsim {

// ---------------------------------------------------------------------------
// Minority game
// ---------------------------------------------------------------------------

struct MinorityGameConfig {
  int agents = 101;
  int memory = 3;
  int strategies = 2;

  void validate() const {
    if (agents < 3 || agents % 2 == 0) throw ConfigError("minority game needs an odd N >= 3");
    if (memory < 1 || memory > 20) throw ConfigError("minority game memory must be in [1, 20]");
    if (strategies < 2) throw ConfigError("minority game needs S >= 2");
  }
};

struct MinorityRound {
  std::vector<int> choices;  // 0 or 1 per agent
  int attendance = 0;        // agents on side 1
  int winning_side = 0;      // the minority side
  std::vector<int> payoffs;  // +1 winners, -1 losers
  int winners = 0;
};

// Minority side and payoffs for one round of choices. With an odd N one
// side is always strictly smaller; it may be empty.
inline MinorityRound resolve_minority(std::vector<int> choices) {
  MinorityRound r;
  r.attendance = static_cast<int>(std::count(choices.begin(), choices.end(), 1));
  const int n = static_cast<int>(choices.size());
  r.winning_side = r.attendance < n - r.attendance ? 1 : 0;
  r.payoffs.resize(choices.size());
  for (std::size_t i = 0; i < choices.size(); ++i) {
    const bool won = choices[i] == r.winning_side;
    r.payoffs[i] = won ? 1 : -1;
    r.winners += won ? 1 : 0;
  }
  r.choices = std::move(choices);
  return r;
}

class MinorityGame {
 public:
  // strategies[a][s][h]: side that strategy s of agent a plays after history h.
  using StrategyTable = std::vector<std::vector<std::vector<int>>>;

  MinorityGame(MinorityGameConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t histories = std::size_t{1} << cfg_.memory;
    RngStream rng(seed, "mg/strategies");
    strategies_.assign(static_cast<std::size_t>(cfg_.agents),
                       std::vector<std::vector<int>>(static_cast<std::size_t>(cfg_.strategies),
                                                     std::vector<int>(histories)));
    for (auto& agent : strategies_)
      for (auto& s : agent)
        for (auto& bit : s) bit = static_cast<int>(rng() >> 63);
    RngStream hist(seed, "mg/history");
    history_ = static_cast<std::size_t>(hist.below(histories));
    init_scores();
  }

  MinorityGame(MinorityGameConfig cfg, StrategyTable strategies, std::size_t history = 0)
      : cfg_(cfg), strategies_(std::move(strategies)), history_(history) {
    cfg_.validate();
    if (strategies_.size() != static_cast<std::size_t>(cfg_.agents))
      throw ConfigError("one strategy set per agent expected");
    init_scores();
  }

  // Every agent plays its best-scoring strategy (ties to the lower index);
  // all strategies are then scored against the winning side.
  MinorityRound step() {
    std::vector<int> choices(strategies_.size());
    for (std::size_t a = 0; a < strategies_.size(); ++a) {
      std::size_t best = 0;
      for (std::size_t s = 1; s < scores_[a].size(); ++s)
        if (scores_[a][s] > scores_[a][best]) best = s;
      choices[a] = strategies_[a][best][history_];
    }
    auto round = resolve_minority(std::move(choices));
    for (std::size_t a = 0; a < strategies_.size(); ++a)
      for (std::size_t s = 0; s < strategies_[a].size(); ++s)
        scores_[a][s] += strategies_[a][s][history_] == round.winning_side ? 1 : -1;
    const std::size_t mask = (std::size_t{1} << cfg_.memory) - 1;
    history_ = ((history_ << 1) | static_cast<std::size_t>(round.winning_side)) & mask;
    return round;
  }

  std::size_t history() const { return history_; }
  const std::vector<std::vector<long>>& scores() const { return scores_; }
  const MinorityGameConfig& config() const { return cfg_; }

 private:
  void init_scores() {
    scores_.assign(strategies_.size(), {});
    for (std::size_t a = 0; a < strategies_.size(); ++a)
      scores_[a].assign(strategies_[a].size(), 0);
  }

  MinorityGameConfig cfg_;
  StrategyTable strategies_;
  std::vector<std::vector<long>> scores_;
  std::size_t history_ = 0;
};

inline double attendance_variance(const std::vector<int>& attendance) {
  if (attendance.empty()) return 0.0;
  double mean = 0.0;
  for (int a : attendance) mean += a;
  mean /= static_cast<double>(attendance.size());
  double ss = 0.0;
  for (int a : attendance) ss += (a - mean) * (a - mean);
  return ss / static_cast<double>(attendance.size());
}

// Coin-flip agents: attendance is Binomial(N, 1/2).
inline double random_agents_variance(int agents, int rounds, std::uint64_t seed) {
  RngStream rng(seed, "mg/random");
  std::vector<int> att;
  att.reserve(static_cast<std::size_t>(rounds));
  for (int r = 0; r < rounds; ++r) {
    int a = 0;
    for (int i = 0; i < agents; ++i) a += static_cast<int>(rng() >> 63);
    att.push_back(a);
  }
  return attendance_variance(att);
}

inline double strategic_variance(MinorityGameConfig cfg, int rounds, std::uint64_t seed,
                                 int warmup = 0) {
  MinorityGame game(cfg, seed);
  for (int r = 0; r < warmup; ++r) game.step();
  std::vector<int> att;
  att.reserve(static_cast<std::size_t>(rounds));
  for (int r = 0; r < rounds; ++r) att.push_back(game.step().attendance);
  return attendance_variance(att);
}

struct MinorityStudyRow {
  int memory = 0;  // 0 marks the coin-flip baseline
  double alpha = 0.0;
  double variance = 0.0;
  double variance_per_agent = 0.0;
};

inline std::vector<MinorityStudyRow> minority_study(int agents, int strategies,
                                                    const std::vector<int>& memories, int rounds,
                                                    std::uint64_t seed, int warmup = 0) {
  std::vector<MinorityStudyRow> rows;
  const double base = random_agents_variance(agents, rounds, seed);
  rows.push_back({0, 0.0, base, base / agents});
  for (int m : memories) {
    const double v = strategic_variance({agents, m, strategies}, rounds, seed, warmup);
    rows.push_back({m, std::ldexp(1.0, m) / agents, v, v / agents});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Tabular reinforcement learning
// ---------------------------------------------------------------------------

struct RLConfig {
  double alpha = 0.1;
  double gamma = 0.9;
  double epsilon_start = 0.5;
  double epsilon_end = 0.01;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
    for (double e : {epsilon_start, epsilon_end})
      if (!(e >= 0.0 && e <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
  }

  // Geometric decay from epsilon_start at episode 0 to epsilon_end at the last.
  double epsilon_at(std::size_t episode, std::size_t episodes) const {
    if (episodes <= 1 || epsilon_start == epsilon_end) return epsilon_start;
    const double frac = static_cast<double>(episode) / static_cast<double>(episodes - 1);
    if (epsilon_start == 0.0 || epsilon_end == 0.0)
      return epsilon_start + (epsilon_end - epsilon_start) * frac;
    return epsilon_start * std::pow(epsilon_end / epsilon_start, frac);
  }
};

class QTable {
 public:
  QTable() = default;
  QTable(std::size_t states, std::size_t actions)
      : states_(states), actions_(actions), values_(states * actions, 0.0) {
    if (states == 0 || actions == 0) throw ConfigError("Q table needs states and actions");
  }

  std::size_t states() const { return states_; }
  std::size_t actions() const { return actions_; }
  double& at(std::size_t s, std::size_t a) { return values_.at(s * actions_ + a); }
  double at(std::size_t s, std::size_t a) const { return values_.at(s * actions_ + a); }

  // Ties to the lowest action index.
  std::size_t greedy(std::size_t s) const {
    std::size_t best = 0;
    for (std::size_t a = 1; a < actions_; ++a)
      if (at(s, a) > at(s, best)) best = a;
    return best;
  }

  double best_value(std::size_t s) const { return at(s, greedy(s)); }

  std::vector<std::size_t> policy() const {
    std::vector<std::size_t> p(states_);
    for (std::size_t s = 0; s < states_; ++s) p[s] = greedy(s);
    return p;
  }

  std::size_t choose(std::size_t s, double epsilon, RngStream& rng) const {
    if (rng.uniform() < epsilon) return static_cast<std::size_t>(rng.below(actions_));
    return greedy(s);
  }

  // One-step temporal-difference (Q-learning) backup.
  void update(std::size_t s, std::size_t a, double reward, std::size_t next, bool terminal,
              const RLConfig& cfg) {
    const double target = reward + (terminal ? 0.0 : cfg.gamma * best_value(next));
    at(s, a) += cfg.alpha * (target - at(s, a));
  }

  const std::vector<double>& values() const { return values_; }

 private:
  std::size_t states_ = 0;
  std::size_t actions_ = 0;
  std::vector<double> values_;
};

struct StepResult {
  double reward = 0.0;
  std::size_t next = 0;
  bool terminal = false;
};

struct TrainingResult {
  QTable table;
  std::vector<std::size_t> policy;
  std::vector<double> reward_curve;  // total reward per episode
};

// Env must provide: states(), actions(), reset(RngStream&) -> state,
// step(state, action, RngStream&) -> StepResult.
template <typename Env>
TrainingResult rl_train(Env& env, const RLConfig& cfg, std::size_t episodes,
                        std::size_t steps_per_episode, std::uint64_t seed) {
  cfg.validate();
  TrainingResult out{QTable(env.states(), env.actions()), {}, {}};
  RngStream rng(seed, "rl/train");
  out.reward_curve.reserve(episodes);
  for (std::size_t e = 0; e < episodes; ++e) {
    const double eps = cfg.epsilon_at(e, episodes);
    std::size_t s = env.reset(rng);
    double total = 0.0;
    for (std::size_t k = 0; k < steps_per_episode; ++k) {
      const auto a = out.table.choose(s, eps, rng);
      const auto r = env.step(s, a, rng);
      out.table.update(s, a, r.reward, r.next, r.terminal, cfg);
      total += r.reward;
      s = r.next;
      if (r.terminal) break;
    }
    out.reward_curve.push_back(total);
  }
  out.policy = out.table.policy();
  return out;
}

// ---------------------------------------------------------------------------
// Reconfiguration of the logical Grid
// ---------------------------------------------------------------------------

enum class ActionType { noop, shift_bandwidth, move_replica, shift_vo_share };

struct ReconfigurationAction {
  ActionType type = ActionType::noop;
  std::string from;     // link id, SE id or VO name
  std::string to;       // link id, SE id or VO name
  std::string dataset;  // move_replica
  std::string ce;       // shift_vo_share
  double quantum = 0.0;

  std::string label() const {
    switch (type) {
      case ActionType::noop: return "noop";
      case ActionType::shift_bandwidth: return "bandwidth:" + from + "->" + to;
      case ActionType::move_replica: return "replica:" + dataset + ":" + from + "->" + to;
      case ActionType::shift_vo_share: return "share:" + ce + ":" + from + "->" + to;
    }
    return "noop";
  }
};

// Applies the action if feasible; otherwise leaves the topology untouched
// and returns false.
inline bool apply_reconfiguration(const ReconfigurationAction& act, GridTopology& topo,
                                  const std::function<bool(const std::string&)>& referenced = {}) {
  switch (act.type) {
    case ActionType::noop: return true;
    case ActionType::shift_bandwidth: {
      if (!topo.has_link(act.from) || !topo.has_link(act.to) || act.from == act.to) return false;
      const double from_cap = topo.link(act.from).capacity;
      const double to_cap = topo.link(act.to).capacity;
      if (!(act.quantum > 0.0) || !(from_cap - act.quantum > 0.0)) return false;
      topo.reconfigure_link(act.from, from_cap - act.quantum);
      topo.reconfigure_link(act.to, to_cap + act.quantum);
      return true;
    }
    case ActionType::move_replica: {
      if (!topo.has_replica(act.dataset, act.from) || topo.has_replica(act.dataset, act.to))
        return false;
      if (!topo.ses().count(act.to)) return false;
      const Bytes size = topo.catalog().at(act.dataset).at(act.from);
      if (topo.se(act.to).free() < size) return false;
      topo.replica_place(act.dataset, act.to, size);
      topo.replica_drop(act.dataset, act.from, referenced);
      return true;
    }
    case ActionType::shift_vo_share: {
      if (!topo.ces().count(act.ce) || !(act.quantum > 0.0)) return false;
      const auto& shares = topo.ce(act.ce).vo_shares;
      auto it = shares.find(act.from);
      if (it == shares.end() || it->second < act.quantum) return false;
      const double to_share = shares.count(act.to) ? shares.at(act.to) : 0.0;
      const double from_share = it->second;
      topo.set_vo_share(act.ce, act.from, from_share - act.quantum);
      topo.set_vo_share(act.ce, act.to, to_share + act.quantum);
      return true;
    }
  }
  return false;
}

// Reinforcement-learning control of the running simulation: load levels of
// the feature subsystems form the state, actions fire at episode boundaries.
struct GridRLSettings {
  RLConfig learning;
  std::vector<ReconfigurationAction> actions;  // must contain a noop
  std::vector<std::string> features;           // CE or link ids
  std::vector<double> level_edges{1.0 / 3.0, 2.0 / 3.0};
  double episode_length = 600.0;

  std::size_t levels() const { return level_edges.size() + 1; }

  std::size_t state_count() const {
    std::size_t n = 1;
    for (std::size_t i = 0; i < features.size(); ++i) n *= levels();
    return n;
  }

  void validate() const {
    learning.validate();
    if (actions.empty()) throw ConfigError("RL action set is empty");
    if (std::none_of(actions.begin(), actions.end(),
                     [](const auto& a) { return a.type == ActionType::noop; }))
      throw ConfigError("RL action set must contain a noop");
    if (!(episode_length > 0.0)) throw ConfigError("RL episode length must be positive");
    if (!std::is_sorted(level_edges.begin(), level_edges.end()))
      throw ConfigError("RL level edges must be ascending");
  }

  std::size_t level_of(double utilization) const {
    std::size_t l = 0;
    while (l < level_edges.size() && utilization >= level_edges[l]) ++l;
    return l;
  }
};

}  // namespace gridsim

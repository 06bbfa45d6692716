#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gridsim/error.hpp"
#include "gridsim/workload.hpp"

namespace gridsim {

// Resource consumption of one job, the usage side of utility and billing.
struct ResourceUsage {
  double cpu_seconds = 0.0;
  double bytes = 0.0;
  double storage_byte_seconds = 0.0;
};

struct UtilityWeights {
  double queue = 1.0;
  double transfer = 1.0;
  double execution = 1.0;
  double cpu = 0.0;
  double bytes = 0.0;
  double storage = 0.0;

  bool valid() const {
    const double all[] = {queue, transfer, execution, cpu, bytes, storage};
    bool any = false;
    for (double w : all) {
      if (!(w >= 0.0) || !std::isfinite(w)) return false;
      any = any || w > 0.0;
    }
    return any;
  }
};

// Linear utility: minus the weighted time components and resource usage.
// Higher is better; a job that cost nothing scores 0.
inline double utility_of(const JobRecord& record, const UtilityWeights& w,
                         const ResourceUsage& usage = {}) {
  const auto t = time_components(record);
  return -(w.queue * t.queuing + w.transfer * t.transfer + w.execution * t.execution) -
         (w.cpu * usage.cpu_seconds + w.bytes * usage.bytes +
          w.storage * usage.storage_byte_seconds);
}

namespace detail {

inline void check_shares(std::span<const double> p) {
  if (p.empty()) throw DomainError("distribution is empty");
  for (double v : p)
    if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("distribution has a negative share");
}

// Order-independent sum: adds the values in ascending order.
inline double sorted_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace detail

// Shares over a window; zero total load is treated as uniform (nothing is
// concentrated anywhere).
struct LoadDistribution {
  double t0 = 0.0;
  double t1 = 0.0;
  std::vector<std::string> ids;
  std::vector<double> shares;

  static LoadDistribution from_loads(double t0, double t1, std::vector<std::string> ids,
                                     std::span<const double> loads) {
    if (!(t1 > t0)) throw DomainError("load window must have positive length");
    if (ids.size() != loads.size()) throw DomainError("one load per subsystem expected");
    detail::check_shares(loads);
    LoadDistribution d{t0, t1, std::move(ids), {}};
    const double total = std::accumulate(loads.begin(), loads.end(), 0.0);
    d.shares.resize(loads.size());
    for (std::size_t i = 0; i < loads.size(); ++i)
      d.shares[i] = total > 0.0 ? loads[i] / total : 1.0 / static_cast<double>(loads.size());
    return d;
  }
};

// -sum p ln p in nats, with 0 ln 0 = 0.
inline double shannon_entropy(std::span<const double> p) {
  detail::check_shares(p);
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

inline double renyi_entropy(std::span<const double> p, double q) {
  if (!(q >= 0.0) || !std::isfinite(q)) throw DomainError("Renyi order must be >= 0");
  detail::check_shares(p);
  if (q == 1.0) return shannon_entropy(p);
  if (q == 0.0) {
    const auto support = std::count_if(p.begin(), p.end(), [](double v) { return v > 0.0; });
    return std::log(static_cast<double>(support));
  }
  double s = 0.0;
  for (double v : p)
    if (v > 0.0) s += std::pow(v, q);
  return std::log(s) / (1.0 - q) + 0.0;  // no negative zero
}

struct Moments {
  double mean = 0.0;
  double variance = 0.0;  // unbiased
};

// samples[t][i]: agent count of subsystem i at sample t.
inline std::vector<Moments> agent_fluctuation(const std::vector<std::vector<double>>& samples) {
  if (samples.size() < 2) throw DomainError("fluctuation needs at least two samples");
  const auto width = samples.front().size();
  std::vector<Moments> out(width);
  const double n = static_cast<double>(samples.size());
  for (std::size_t i = 0; i < width; ++i) {
    double sum = 0.0;
    for (const auto& s : samples) {
      if (s.size() != width) throw DomainError("ragged agent-count samples");
      sum += s[i];
    }
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& s : samples) ss += (s[i] - mean) * (s[i] - mean);
    out[i] = Moments{mean, ss / (n - 1.0)};
  }
  return out;
}

struct WeightedState {
  std::string id;
  double weight = 0.0;
};

struct CutoffResult {
  std::vector<WeightedState> retained;  // renormalized
  double bias = 0.0;                    // dropped normalized mass
};

// Drops states whose normalized weight falls below epsilon.
inline CutoffResult low_utility_cutoff(const std::vector<WeightedState>& states, double epsilon) {
  double total = 0.0;
  for (const auto& s : states) {
    if (!(s.weight >= 0.0) || !std::isfinite(s.weight))
      throw DomainError("state weights must be nonnegative");
    total += s.weight;
  }
  if (!(total > 0.0)) throw DomainError("state weights have zero total");
  CutoffResult r;
  double kept = 0.0;
  double dropped = 0.0;
  for (const auto& s : states) {
    if (s.weight / total < epsilon) {
      dropped += s.weight;
    } else {
      r.retained.push_back(s);
      kept += s.weight;
    }
  }
  if (r.retained.empty()) throw DomainError("cutoff dropped every state; lower epsilon");
  for (auto& s : r.retained) s.weight /= kept;
  r.bias = dropped / total;
  return r;
}

struct MetricSnapshot {
  double t0 = 0.0;
  double t1 = 0.0;
  double shannon = 0.0;
  std::vector<std::pair<double, double>> renyi;  // (order, entropy)
  std::vector<std::string> ids;
  std::vector<double> flow;    // utility flow per subsystem in the window
  std::vector<double> agents;  // jobs present per subsystem at window end
  double utility_mean = 0.0;
  double utility_variance = 0.0;
  std::size_t completed = 0;
};

enum class EquilibriumVerdict { stationary_equipartitioned, stationary_skewed, non_stationary };

constexpr std::string_view to_string(EquilibriumVerdict v) {
  switch (v) {
    case EquilibriumVerdict::stationary_equipartitioned: return "stationary-equipartitioned";
    case EquilibriumVerdict::stationary_skewed: return "stationary-skewed";
    case EquilibriumVerdict::non_stationary: return "non-stationary";
  }
  return "non-stationary";
}

struct EquilibriumReport {
  std::vector<std::string> ids;
  std::vector<double> mean_flow;
  double cv = 0.0;
  double drift = 0.0;
  EquilibriumVerdict verdict = EquilibriumVerdict::non_stationary;
};

struct EquilibriumThresholds {
  double cv_max = 0.1;
  double drift_max = 2.0;
};

// CV of the per-subsystem mean flow (population standard deviation over the
// mean) and drift of the total flow between the two halves of the series,
// in pooled standard deviations.
inline EquilibriumReport equipartition_test(std::span<const MetricSnapshot> snaps,
                                            EquilibriumThresholds th = {}) {
  if (snaps.size() < 4) throw DomainError("equipartition test needs at least 4 snapshots");
  const auto width = snaps.front().flow.size();
  if (width == 0) throw DomainError("snapshots carry no subsystems");
  EquilibriumReport rep;
  rep.ids = snaps.front().ids;
  rep.mean_flow.resize(width);
  std::vector<double> totals;
  for (const auto& s : snaps) {
    if (s.flow.size() != width) throw DomainError("snapshots disagree on subsystems");
    totals.push_back(detail::sorted_sum(s.flow));
  }
  for (std::size_t i = 0; i < width; ++i) {
    double acc = 0.0;
    for (const auto& s : snaps) acc += s.flow[i];
    rep.mean_flow[i] = acc / static_cast<double>(snaps.size());
  }
  const double n = static_cast<double>(width);
  const double mean = detail::sorted_sum(rep.mean_flow) / n;
  if (mean == 0.0) throw DomainError("mean utility flow is zero; equipartition is indeterminate");
  std::vector<double> sq;
  for (double f : rep.mean_flow) sq.push_back((f - mean) * (f - mean));
  rep.cv = std::sqrt(detail::sorted_sum(sq) / n) / std::abs(mean);

  const std::size_t n1 = totals.size() / 2;
  const std::size_t n2 = totals.size() - n1;
  auto stats = [](std::span<const double> xs) {
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::pair{m, ss};
  };
  const auto [m1, ss1] = stats(std::span<const double>(totals).first(n1));
  const auto [m2, ss2] = stats(std::span<const double>(totals).last(n2));
  const double pooled = std::sqrt((ss1 + ss2) / static_cast<double>(n1 + n2 - 2));
  if (pooled > 0.0)
    rep.drift = std::abs(m2 - m1) / pooled;
  else
    rep.drift = m1 == m2 ? 0.0 : std::numeric_limits<double>::infinity();

  if (rep.drift > th.drift_max)
    rep.verdict = EquilibriumVerdict::non_stationary;
  else if (rep.cv <= th.cv_max)
    rep.verdict = EquilibriumVerdict::stationary_equipartitioned;
  else
    rep.verdict = EquilibriumVerdict::stationary_skewed;
  return rep;
}

struct CollectiveFlowConfig {
  double theta = 0.25;  // relative entropy drop
  int persistence = 3;  // consecutive low windows
  double lambda = 0.2;  // baseline smoothing
};

struct CollectiveFlowAlert {
  std::size_t window = 0;
  double t0 = 0.0;
  double t1 = 0.0;
  double entropy = 0.0;
  double baseline = 0.0;
};

// Flags a window once entropy has stayed below (1 - theta) of the trailing
// exponentially weighted baseline for `persistence` consecutive windows.
// One alert per low run.
inline std::vector<CollectiveFlowAlert> detect_collective_flow(
    std::span<const MetricSnapshot> snaps, CollectiveFlowConfig cfg = {}) {
  if (!(cfg.theta > 0.0 && cfg.theta < 1.0)) throw DomainError("theta must lie in (0, 1)");
  if (cfg.persistence < 1) throw DomainError("persistence must be >= 1");
  if (!(cfg.lambda > 0.0 && cfg.lambda <= 1.0)) throw DomainError("lambda must lie in (0, 1]");
  std::vector<CollectiveFlowAlert> alerts;
  if (snaps.empty()) return alerts;
  double baseline = snaps.front().shannon;
  int run = 0;
  for (std::size_t i = 1; i < snaps.size(); ++i) {
    const double h = snaps[i].shannon;
    if (h < (1.0 - cfg.theta) * baseline) {
      if (++run == cfg.persistence)
        alerts.push_back({i, snaps[i].t0, snaps[i].t1, h, baseline});
    } else {
      run = 0;
    }
    baseline = cfg.lambda * h + (1.0 - cfg.lambda) * baseline;
  }
  return alerts;
}

}  // namespace gridsim

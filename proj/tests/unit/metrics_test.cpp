#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "support.hpp"

using namespace gridsim;

namespace {

std::vector<double> random_distribution(RngStream& rng, std::size_t n, double zero_p = 0.2) {
  std::vector<double> p(n);
  for (auto& v : p) v = rng.bernoulli(zero_p) ? 0.0 : rng.uniform_open_low();
  if (std::all_of(p.begin(), p.end(), [](double v) { return v == 0.0; })) p[0] = 1.0;
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& v : p) v /= total;
  return p;
}

std::vector<MetricSnapshot> series(const std::vector<std::vector<double>>& flows) {
  std::vector<MetricSnapshot> out;
  for (std::size_t w = 0; w < flows.size(); ++w) {
    MetricSnapshot s;
    s.t0 = 600.0 * w;
    s.t1 = 600.0 * (w + 1);
    for (std::size_t i = 0; i < flows[w].size(); ++i) s.ids.push_back("s" + std::to_string(i));
    s.flow = flows[w];
    s.shannon = shannon_entropy(LoadDistribution::from_loads(s.t0, s.t1, s.ids, s.flow).shares);
    out.push_back(s);
  }
  return out;
}

std::vector<MetricSnapshot> entropy_series(const std::vector<double>& h) {
  std::vector<MetricSnapshot> out;
  for (std::size_t i = 0; i < h.size(); ++i) {
    MetricSnapshot s;
    s.t0 = 10.0 * i;
    s.t1 = 10.0 * (i + 1);
    s.shannon = h[i];
    out.push_back(s);
  }
  return out;
}

JobRecord done_record(double q, double t, double x) {
  JobRecord r;
  r.spec.id = "r";
  r.status = JobStatus::done;
  r.ts.submit = r.ts.broker_accept = r.ts.match = r.ts.transfer_start = SimTime(0);
  r.ts.transfer_end = r.ts.queue_enter = SimTime(t);
  r.ts.queue_leave = r.ts.exec_start = SimTime(t + q);
  r.ts.exec_end = SimTime(t + q + x);
  return r;
}

}  // namespace

TEST(Utility, ZeroCostIsZero) {
  EXPECT_EQ(utility_of(done_record(0, 0, 0), UtilityWeights{}), 0.0);
}

TEST(Utility, WeightedSum) {
  EXPECT_EQ(utility_of(done_record(2, 3, 5), UtilityWeights{}), -10.0);
  UtilityWeights w;
  w.cpu = 0.5;
  EXPECT_EQ(utility_of(done_record(2, 3, 5), w, ResourceUsage{4, 0, 0}), -12.0);
}

TEST(Utility, IncompleteRecordThrows) {
  auto r = done_record(1, 1, 1);
  r.status = JobStatus::running;
  EXPECT_THROW(utility_of(r, UtilityWeights{}), DomainError);
}

TEST(Utility, ScalingWeightsPreservesRanking) {
  RngStream rng(2, "ranking");
  std::vector<JobRecord> jobs;
  for (int i = 0; i < 50; ++i)
    jobs.push_back(done_record(rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(0, 100)));
  UtilityWeights w{0.7, 1.3, 0.2};
  UtilityWeights w2{1.4, 2.6, 0.4};
  for (std::size_t a = 0; a < jobs.size(); ++a) {
    EXPECT_DOUBLE_EQ(utility_of(jobs[a], w2), 2.0 * utility_of(jobs[a], w));
    for (std::size_t b = 0; b < jobs.size(); ++b)
      ASSERT_EQ(utility_of(jobs[a], w) < utility_of(jobs[b], w),
                utility_of(jobs[a], w2) < utility_of(jobs[b], w2));
  }
}

TEST(Shannon, UniformAndDegenerate) {
  const std::vector<double> u(8, 0.125);
  EXPECT_EQ(shannon_entropy(u), std::log(8.0));
  EXPECT_EQ(shannon_entropy(std::vector<double>{1, 0, 0, 0}), 0.0);
}

TEST(Shannon, ThreeStateValue) {
  const std::vector<double> p{0.5, 0.25, 0.25};
  const double oracle = 1.5 * std::log(2.0);
  EXPECT_NEAR(shannon_entropy(p), oracle, 1e-15);
  EXPECT_NEAR(shannon_entropy(p), 1.039720770839918, 1e-12);
}

TEST(Shannon, NegativeShareThrows) {
  EXPECT_THROW(shannon_entropy(std::vector<double>{1.2, -0.2}), DomainError);
}

TEST(Shannon, BoundedByLogNAndMaximalAtUniform) {
  RngStream rng(4, "bounds");
  for (int i = 0; i < 1000; ++i) {
    const auto n = 1 + rng.below(16);
    const auto p = random_distribution(rng, n);
    const double h = shannon_entropy(p);
    ASSERT_GE(h, 0.0);
    ASSERT_LE(h, std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST(Shannon, CollectivizationNeverRaisesEntropy) {
  RngStream rng(6, "mixture");
  for (int i = 0; i < 500; ++i) {
    const auto n = 2 + rng.below(14);
    const auto p = random_distribution(rng, n);
    // Pouring mass onto the largest share only ever concentrates the load.
    const auto target = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    double prev = shannon_entropy(p);
    for (double lam : {0.1, 0.3, 0.6, 0.9, 1.0}) {
      std::vector<double> q(n);
      for (std::size_t k = 0; k < n; ++k) q[k] = (1 - lam) * p[k] + (k == target ? lam : 0.0);
      const double h = shannon_entropy(q);
      ASSERT_LE(h, prev + 1e-12);
      prev = h;
    }
  }
}

TEST(Renyi, UniformIsLogNForEveryOrder) {
  for (int n : {2, 4, 8, 64}) {
    const std::vector<double> u(static_cast<std::size_t>(n), 1.0 / n);
    for (double q : {0.0, 0.5, 1.0, 2.0, 5.0})
      EXPECT_NEAR(renyi_entropy(u, q), std::log(n), 1e-12);
  }
}

TEST(Renyi, OrderTwoValue) {
  EXPECT_NEAR(renyi_entropy(std::vector<double>{0.75, 0.25}, 2.0), -std::log(0.625), 1e-15);
  EXPECT_NEAR(renyi_entropy(std::vector<double>{0.75, 0.25}, 2.0), 0.4700036292457356, 1e-12);
}

TEST(Renyi, LimitAtOneIsShannon) {
  RngStream rng(10, "limit");
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_distribution(rng, 1 + rng.below(16));
    ASSERT_LT(std::abs(renyi_entropy(p, 1 + 1e-6) - shannon_entropy(p)), 1e-4);
  }
}

TEST(Renyi, NonincreasingInOrderAndSupportAtZero) {
  RngStream rng(11, "mono");
  const std::vector<double> orders{0.0, 0.25, 0.5, 0.9, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0};
  for (int i = 0; i < 500; ++i) {
    const auto p = random_distribution(rng, 1 + rng.below(16));
    const auto support = std::count_if(p.begin(), p.end(), [](double v) { return v > 0; });
    EXPECT_EQ(renyi_entropy(p, 0.0), std::log(static_cast<double>(support)));
    for (std::size_t k = 1; k < orders.size(); ++k)
      ASSERT_LE(renyi_entropy(p, orders[k]), renyi_entropy(p, orders[k - 1]) + 1e-12);
  }
}

TEST(Renyi, NegativeOrderThrows) {
  EXPECT_THROW(renyi_entropy(std::vector<double>{1.0}, -0.5), DomainError);
}

TEST(Fluctuation, ConstantAndAlternating) {
  const auto c = agent_fluctuation({{3, 1}, {3, 1}, {3, 1}});
  EXPECT_EQ(c[0].variance, 0.0);
  EXPECT_EQ(c[1].mean, 1.0);
  const auto a = agent_fluctuation({{0}, {2}, {0}, {2}});
  EXPECT_EQ(a[0].mean, 1.0);
  EXPECT_DOUBLE_EQ(a[0].variance, 4.0 / 3.0);
  EXPECT_THROW(agent_fluctuation({{1}}), DomainError);
}

TEST(Fluctuation, PoissonDispersionNearOne) {
  RngStream rng(13, "poisson");
  std::vector<std::vector<double>> samples;
  for (int i = 0; i < 10000; ++i) {
    // Poisson(5) by counting unit-rate exponential gaps inside [0, 5).
    double t = rng.exponential(1.0);
    double k = 0;
    while (t < 5.0) {
      ++k;
      t += rng.exponential(1.0);
    }
    samples.push_back({k});
  }
  const auto m = agent_fluctuation(samples);
  const double ratio = m[0].variance / m[0].mean;
  EXPECT_GE(ratio, 0.8);
  EXPECT_LE(ratio, 1.2);
}

TEST(Cutoff, ZeroEpsilonKeepsEverything) {
  const auto r = low_utility_cutoff({{"a", 1}, {"b", 3}}, 0.0);
  EXPECT_EQ(r.retained.size(), 2u);
  EXPECT_EQ(r.bias, 0.0);
  EXPECT_EQ(r.retained[1].weight, 0.75);
}

TEST(Cutoff, DropsLightStatesAndReportsBias) {
  const auto r = low_utility_cutoff({{"a", 10}, {"b", 5}, {"c", 0.01}}, 0.1);
  ASSERT_EQ(r.retained.size(), 2u);
  EXPECT_EQ(r.bias, 0.01 / 15.01);
  EXPECT_NEAR(r.bias, 6.662e-4, 1e-7);
}

TEST(Cutoff, DroppingEverythingThrows) {
  EXPECT_THROW(low_utility_cutoff({{"a", 1}, {"b", 1}, {"c", 1}}, 1.0), DomainError);
}

TEST(Cutoff, BiasIsDroppedMassAndSharesResum) {
  RngStream rng(14, "cutoff");
  for (int i = 0; i < 500; ++i) {
    std::vector<WeightedState> states;
    const auto n = 1 + rng.below(20);
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double w = rng.uniform(0, 10) * (rng.bernoulli(0.3) ? 1e-3 : 1.0);
      states.push_back({"s" + std::to_string(k), w});
      total += w;
    }
    if (!(total > 0)) continue;
    const double eps = rng.uniform(0, 0.05);
    const auto r = low_utility_cutoff(states, eps);
    double dropped = 0.0;
    for (const auto& s : states)
      if (s.weight / total < eps) dropped += s.weight;
    ASSERT_NEAR(r.bias, dropped / total, 1e-15);
    double resum = 0.0;
    for (const auto& s : r.retained) resum += s.weight;
    ASSERT_NEAR(resum, 1.0, 1e-12);
  }
}

TEST(Equipartition, IdenticalFlowsAreEquipartitioned) {
  const auto rep = equipartition_test(series(std::vector<std::vector<double>>(6, {5, 5, 5})));
  EXPECT_EQ(rep.cv, 0.0);
  EXPECT_EQ(rep.drift, 0.0);
  EXPECT_EQ(rep.verdict, EquilibriumVerdict::stationary_equipartitioned);
}

TEST(Equipartition, SkewedFlows) {
  const auto rep = equipartition_test(series(std::vector<std::vector<double>>(6, {2, 2, 2, 8})));
  const double mean = 3.5;
  const double sd = std::sqrt((3 * 1.5 * 1.5 + 4.5 * 4.5) / 4.0);
  EXPECT_NEAR(rep.cv, sd / mean, 1e-15);
  EXPECT_EQ(rep.verdict, EquilibriumVerdict::stationary_skewed);
}

TEST(Equipartition, LinearGrowthIsNonStationary) {
  std::vector<std::vector<double>> flows;
  for (int w = 0; w < 12; ++w) flows.push_back({1.0 + w, 1.0 + w});
  EXPECT_EQ(equipartition_test(series(flows)).verdict, EquilibriumVerdict::non_stationary);
}

TEST(Equipartition, InvariantToSubsystemOrder) {
  RngStream rng(15, "order");
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<double>> flows(8, std::vector<double>(5));
    for (auto& row : flows)
      for (auto& v : row) v = rng.uniform(0, 10);
    auto shuffled = flows;
    for (auto& row : shuffled) std::reverse(row.begin(), row.end());
    const auto a = equipartition_test(series(flows));
    const auto b = equipartition_test(series(shuffled));
    EXPECT_EQ(a.verdict, b.verdict);
    EXPECT_EQ(a.cv, b.cv);
    EXPECT_EQ(a.drift, b.drift);
  }
}

TEST(Equipartition, Errors) {
  EXPECT_THROW(equipartition_test(series({{1}, {1}, {1}})), DomainError);
  EXPECT_THROW(equipartition_test(series(std::vector<std::vector<double>>(4, {0, 0}))), DomainError);
}

TEST(CollectiveFlow, ConstantLoadNoAlert) {
  EXPECT_TRUE(detect_collective_flow(entropy_series(std::vector<double>(20, std::log(8.0)))).empty());
}

TEST(CollectiveFlow, StepDownAlerts) {
  std::vector<double> h(10, std::log(8.0));
  h.insert(h.end(), 5, std::log(2.0));
  const auto alerts = detect_collective_flow(entropy_series(h), {0.25, 1, 0.2});
  ASSERT_EQ(alerts.size(), 1u);
  EXPECT_EQ(alerts[0].window, 10u);
}

TEST(CollectiveFlow, PersistenceRequired) {
  std::vector<double> h(10, std::log(8.0));
  h.insert(h.end(), 3, std::log(2.0));
  h.insert(h.end(), 5, std::log(8.0));
  EXPECT_TRUE(detect_collective_flow(entropy_series(h), {0.25, 5, 0.2}).empty());
  EXPECT_EQ(detect_collective_flow(entropy_series(h), {0.25, 3, 0.2}).size(), 1u);
  EXPECT_THROW(detect_collective_flow(entropy_series(h), {1.5, 3, 0.2}), DomainError);
}

TEST(LoadDistribution, SharesFromLoads) {
  const std::vector<double> loads{1, 3};
  const auto d = LoadDistribution::from_loads(0, 10, {"a", "b"}, loads);
  EXPECT_EQ(d.shares, (std::vector<double>{0.25, 0.75}));
  const std::vector<double> idle{0, 0};
  EXPECT_EQ(LoadDistribution::from_loads(0, 10, {"a", "b"}, idle).shares,
            (std::vector<double>{0.5, 0.5}));
  EXPECT_THROW(LoadDistribution::from_loads(5, 5, {"a", "b"}, loads), DomainError);
}

#include <gtest/gtest.h>

#include <map>

#include "support.hpp"

using namespace gridsim;
using testkit::make_config;
using testkit::make_job;

namespace {

UsageRecord usage(std::string job, std::string user, double cpu, double bytes = 0,
                  double storage = 0) {
  UsageRecord u;
  u.job = std::move(job);
  u.user = std::move(user);
  u.vo = "vo";
  u.cpu_seconds = cpu;
  u.bytes_in = bytes;
  u.storage_byte_seconds = storage;
  return u;
}

JobSpec spec(std::string id, std::string user) {
  JobSpec s;
  s.id = std::move(id);
  s.user = std::move(user);
  s.vo = "vo";
  return s;
}

}  // namespace

TEST(Charge, ZeroUsageIsFree) {
  EXPECT_EQ(charge(UsageRecord{}, PriceSchedule{1, 2, 3, 0}), 0.0);
}

TEST(Charge, LinearInRates) {
  EXPECT_EQ(charge(usage("j", "u", 5), PriceSchedule{2, 0, 0, 0}), 10.0);
  const auto u = usage("j", "u", 5, 100, 7);
  PriceSchedule p{0.5, 0.01, 0.25, 0};
  PriceSchedule p2{1.0, 0.02, 0.5, 0};
  EXPECT_EQ(charge(u, p2), 2.0 * charge(u, p));
}

TEST(Charge, UtilityRebateNeverGoesNegative) {
  auto u = usage("j", "u", 5);
  u.utility = -100;
  EXPECT_EQ(charge(u, PriceSchedule{1, 0, 0, 0.01}), 4.0);
  EXPECT_EQ(charge(u, PriceSchedule{1, 0, 0, 1.0}), 0.0);
}

TEST(Quota, AllowAndDeny) {
  AccountingConfig cfg;
  cfg.quotas.push_back(Quota{"user:ann", 100.0, std::nullopt, std::nullopt});
  Accounting acc(cfg);
  ASSERT_TRUE(acc.admit(spec("a", "ann"), Consumption{90, 0, 0}).allowed);
  const auto ok = acc.check_quota("user:ann", Consumption{5, 0, 0});
  EXPECT_TRUE(ok.allowed);
  EXPECT_EQ(ok.headroom.cpu_seconds, 5.0);
  EXPECT_FALSE(acc.check_quota("user:ann", Consumption{15, 0, 0}).allowed);
  EXPECT_TRUE(acc.check_quota("user:bob", Consumption{1e12, 1e12, 1e12}).allowed);
}

TEST(Quota, CountersResetEachPeriod) {
  AccountingConfig cfg;
  cfg.quotas.push_back(Quota{"vo:vo", 50.0, std::nullopt, std::nullopt});
  Accounting acc(cfg);
  EXPECT_TRUE(acc.admit(spec("a", "x"), Consumption{40, 0, 0}).allowed);
  EXPECT_FALSE(acc.admit(spec("b", "y"), Consumption{40, 0, 0}).allowed);
  acc.roll_period(1);
  EXPECT_TRUE(acc.admit(spec("c", "y"), Consumption{40, 0, 0}).allowed);
  EXPECT_THROW(acc.roll_period(0), IntegrityError);
}

TEST(Quota, ActualUsageReplacesProjection) {
  AccountingConfig cfg;
  cfg.quotas.push_back(Quota{"user:ann", 100.0, std::nullopt, std::nullopt});
  Accounting acc(cfg);
  acc.admit(spec("a", "ann"), Consumption{90, 0, 0});
  acc.record_usage(usage("a", "ann", 20));
  EXPECT_EQ(acc.consumed("user:ann").cpu_seconds, 20.0);
  EXPECT_TRUE(acc.check_quota("user:ann", Consumption{75, 0, 0}).allowed);
}

TEST(Quota, SubmissionOnTheBoundaryUsesTheNewPeriod) {
  auto cfg = make_config(testkit::flat_site(1, 1), {make_job("a", 0, 40), make_job("b", 100, 40)});
  cfg.accounting.period = 100;
  cfg.accounting.quotas.push_back(Quota{"user:u", 50.0, std::nullopt, std::nullopt});
  Simulation sim(cfg);
  sim.run();
  EXPECT_EQ(sim.job("b").status, JobStatus::done);
}

TEST(RecordUsage, DuplicateIsAnIntegrityError) {
  Accounting acc;
  acc.record_usage(usage("a", "ann", 1));
  EXPECT_THROW(acc.record_usage(usage("a", "ann", 1)), IntegrityError);
}

TEST(RecordUsage, SimulationRecords) {
  auto solo = make_job("solo", 0, 5);
  auto wide = make_job("wide", 0, 40);
  wide.spec.required_cpus = 4;
  wide.spec.job_class = JobClass::parallel_cluster;
  auto cfg = make_config(testkit::flat_site(1, 8), {solo, wide});
  Simulation sim(cfg);
  sim.run();
  std::map<std::string, UsageRecord> by_job;
  for (const auto& r : sim.accounting().records()) by_job[r.job] = r;
  EXPECT_EQ(by_job.at("solo").cpu_seconds, 5.0);
  EXPECT_EQ(by_job.at("wide").cpu_seconds, 40.0);
  EXPECT_EQ(by_job.at("wide").wall_seconds, 10.0);
}

TEST(RecordUsage, DeniedJobHasZeroUsage) {
  auto cfg = make_config(testkit::flat_site(1, 1), {make_job("a", 0, 50), make_job("b", 1, 60)});
  cfg.accounting.quotas.push_back(Quota{"user:u", 100.0, std::nullopt, std::nullopt});
  Simulation sim(cfg);
  sim.run();
  const auto& recs = sim.accounting().records();
  const auto it = std::find_if(recs.begin(), recs.end(), [](const UsageRecord& r) { return r.job == "b"; });
  ASSERT_NE(it, recs.end());
  EXPECT_EQ(it->status, "denied");
  EXPECT_EQ(it->cpu_seconds + it->bytes_in + it->bytes_out + it->storage_byte_seconds + it->wall_seconds,
            0.0);
}

TEST(Bills, EmptyAndTwoJobs) {
  AccountingConfig cfg;
  cfg.prices.cpu = 1.0;
  Accounting empty(cfg);
  empty.finalize();
  EXPECT_TRUE(empty.bill_report(0).empty());

  Accounting acc(cfg);
  acc.record_usage(usage("a", "ann", 5));
  acc.record_usage(usage("b", "ann", 5));
  acc.finalize();
  const auto bills = acc.bill_report(0);
  ASSERT_EQ(bills.size(), 2u);
  EXPECT_EQ(bills[0].subject, "user:ann");
  EXPECT_EQ(bills[0].total, 10.0);
  EXPECT_EQ(bills[1].subject, "vo:vo");
  EXPECT_EQ(bills[1].jobs, 2u);
}

TEST(Bills, OpenPeriodThrows) {
  Accounting acc;
  acc.admit(spec("a", "ann"), Consumption{});
  EXPECT_THROW(acc.bill_report(0), IntegrityError);
  acc.roll_period(1);
  EXPECT_THROW(acc.bill_report(0), IntegrityError);
  acc.record_usage(usage("a", "ann", 1));
  EXPECT_NO_THROW(acc.bill_report(0));
}

TEST(Bills, TotalsMatchReaggregationOfUsageFile) {
  auto sc = load_scenario(testkit::scenario_dir() / "experiments" / "profitability.json");
  const auto dir = std::filesystem::temp_directory_path() / "gridsim-bills-test";
  std::filesystem::remove_all(dir);
  RunOptions opt;
  opt.out_dir = dir;
  opt.duration = 7200.0;
  const auto res = run_scenario(sc, opt);
  ASSERT_TRUE(res.ok) << res.error;

  // Independent recomputation from the persisted usage records.
  const auto prices = sc.accounting.prices;
  std::map<std::pair<std::string, std::size_t>, double> oracle;
  std::istringstream lines(testkit::slurp(dir / "usage.ndjson"));
  std::string line;
  std::size_t records = 0;
  while (std::getline(lines, line)) {
    const auto u = nlohmann::json::parse(line);
    const double linear = prices.cpu * u["cpu_seconds"].get<double>() +
                          prices.byte * (u["bytes_in"].get<double>() + u["bytes_out"].get<double>()) +
                          prices.storage * u["storage_byte_seconds"].get<double>() +
                          prices.utility * u["utility"].get<double>();
    const double c = linear > 0 ? linear : 0.0;
    const auto period = u["period"].get<std::size_t>();
    oracle[{"user:" + u["user"].get<std::string>(), period}] += c;
    oracle[{"vo:" + u["vo"].get<std::string>(), period}] += c;
    ++records;
  }
  ASSERT_GT(records, 0u);
  std::size_t bills = 0;
  for (const auto& b : res.summary["bills"]) {
    const auto key = std::make_pair(b["subject"].get<std::string>(), b["period"].get<std::size_t>());
    ASSERT_TRUE(oracle.count(key)) << key.first;
    EXPECT_EQ(b["total"].get<double>(), oracle.at(key)) << key.first;
    ++bills;
  }
  EXPECT_EQ(bills, oracle.size());
  std::filesystem::remove_all(dir);
}

TEST(Bills, DeterministicForTheSameTrace) {
  auto sc = load_scenario(testkit::scenario_dir() / "quota.json");
  const auto a = run_scenario(sc).summary["bills"];
  const auto b = run_scenario(sc).summary["bills"];
  EXPECT_EQ(a.dump(), b.dump());
}

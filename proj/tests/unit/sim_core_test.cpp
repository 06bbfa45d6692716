#include <gtest/gtest.h>

#include <set>
#include <vector>

#include "gridsim/rng.hpp"
#include "gridsim/sim_core.hpp"

using namespace gridsim;

namespace {

std::vector<Event> drain(Engine& e, double until) {
  std::vector<Event> seen;
  e.run_until(SimTime(until), [&](const Event& ev) { seen.push_back(ev); });
  return seen;
}

}  // namespace

TEST(Engine, EqualTimesPopInSchedulingOrder) {
  Engine e;
  e.schedule(SimTime(3), EventKind::queue_poll, "first");
  e.schedule(SimTime(3), EventKind::queue_poll, "second");
  e.schedule(SimTime(1), EventKind::queue_poll, "early");
  const auto seen = drain(e, 10);
  ASSERT_EQ(seen.size(), 3u);
  EXPECT_EQ(seen[0].target, "early");
  EXPECT_EQ(seen[1].target, "first");
  EXPECT_EQ(seen[2].target, "second");
}

TEST(Engine, EventAtNowRunsBeforeLaterEvents) {
  Engine e;
  std::vector<std::string> order;
  e.schedule(SimTime(5), EventKind::queue_poll, "later");
  e.schedule(SimTime(2), EventKind::queue_poll, "spawner");
  e.run_until(SimTime(10), [&](const Event& ev) {
    order.push_back(ev.target);
    if (ev.target == "spawner") e.schedule(e.now(), EventKind::queue_poll, "same-instant");
  });
  EXPECT_EQ(order, (std::vector<std::string>{"spawner", "same-instant", "later"}));
}

TEST(Engine, SchedulingIntoThePastThrows) {
  Engine e;
  e.schedule(SimTime(4), EventKind::queue_poll, "x");
  drain(e, 4);
  EXPECT_THROW(e.schedule(SimTime(3.5), EventKind::queue_poll, "y"), ScheduleError);
  EXPECT_THROW(e.schedule(SimTime(std::nan("")), EventKind::queue_poll, "y"), ScheduleError);
}

TEST(Engine, RunUntilStopsAtHorizon) {
  Engine e;
  for (double t : {2.0, 5.0, 12.0}) e.schedule(SimTime(t), EventKind::queue_poll, "x");
  const auto stats = e.run_until(SimTime(10), [](const Event&) {});
  EXPECT_EQ(stats.events_processed, 2u);
  EXPECT_EQ(stats.clock, SimTime(10));
  EXPECT_EQ(e.pending(), 1u);
}

TEST(Engine, EmptyQueueAdvancesClock) {
  Engine e;
  EXPECT_EQ(e.now(), SimTime(0));
  const auto stats = e.run_until(SimTime(7), [](const Event&) {});
  EXPECT_EQ(stats.events_processed, 0u);
  EXPECT_EQ(e.now(), SimTime(7));
  EXPECT_THROW(e.run_until(SimTime(6), [](const Event&) {}), ScheduleError);
}

TEST(Engine, ClockIsMonotoneUnderRandomSchedules) {
  RngStream rng(3, "engine-test");
  Engine e;
  for (int i = 0; i < 500; ++i) e.schedule(SimTime(rng.uniform(0, 100)), EventKind::queue_poll, "x");
  double last = -1;
  std::uint64_t last_seq = 0;
  e.run_until(SimTime(200), [&](const Event& ev) {
    ASSERT_GE(ev.time.seconds(), last);
    if (ev.time.seconds() == last) ASSERT_GT(ev.seq, last_seq);
    last = ev.time.seconds();
    last_seq = ev.seq;
    if (rng.bernoulli(0.3)) e.schedule(e.now() + rng.uniform(0, 5), EventKind::queue_poll, "y");
  });
}

TEST(Engine, HandlerErrorsNameTheEvent) {
  Engine e;
  e.schedule(SimTime(1), EventKind::exec_start, "ce7");
  try {
    e.run_until(SimTime(2), [](const Event&) { throw std::runtime_error("boom"); });
    FAIL() << "expected SimulationError";
  } catch (const SimulationError& err) {
    EXPECT_NE(err.event().find("exec-start"), std::string::npos);
    EXPECT_NE(err.event().find("ce7"), std::string::npos);
  }
}

TEST(Engine, DiscardRemovesMatchingEvents) {
  Engine e;
  e.schedule(SimTime(1), EventKind::job_submit, "a");
  e.schedule(SimTime(2), EventKind::queue_poll, "b");
  e.schedule(SimTime(3), EventKind::job_submit, "c");
  EXPECT_EQ(e.discard_if([](const Event& ev) { return ev.kind == EventKind::job_submit; }), 2u);
  const auto seen = drain(e, 10);
  ASSERT_EQ(seen.size(), 1u);
  EXPECT_EQ(seen[0].target, "b");
}

TEST(RngStream, SameKeySameSequence) {
  RngStream a(42, "ce0/arrivals");
  RngStream b(42, "ce0/arrivals");
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
}

TEST(RngStream, SubstreamsDoNotPerturbEachOther) {
  RngStream solo(42, "x");
  std::vector<std::uint64_t> expected;
  for (int i = 0; i < 50; ++i) expected.push_back(solo());

  RngStream x(42, "x");
  RngStream y(42, "y");
  std::vector<std::uint64_t> got;
  for (int i = 0; i < 50; ++i) {
    for (int k = 0; k < i % 7; ++k) y();
    got.push_back(x());
  }
  EXPECT_EQ(got, expected);
}

TEST(RngStream, DistinctKeysAndSeedsDiffer) {
  std::set<std::uint64_t> firsts;
  for (std::uint64_t seed : {1, 2, 3})
    for (const char* key : {"a", "b", "c"}) firsts.insert(RngStream(seed, key)());
  EXPECT_EQ(firsts.size(), 9u);
}

TEST(RngStream, UniformStaysInRange) {
  RngStream r(9, "u");
  double sum = 0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 100000, 0.5, 0.005);
  for (int i = 0; i < 1000; ++i) ASSERT_LT(r.below(7), 7u);
}

#include <gtest/gtest.h>

#include "support.hpp"

using namespace gridsim;
using testkit::flat_site;

namespace {

// Two sites joined by two parallel link paths of equal latency.
GridTopology two_sites() {
  GridTopology t;
  t.add_site("a");
  t.add_site("b");
  t.add_site("m");
  t.broker_site = "a";
  t.add_se(StorageElement{"se-a", "a", 1ULL << 40, 0});
  t.add_se(StorageElement{"se-b", "b", 1ULL << 40, 0});
  t.add_link(Link{"z-direct", "a", "b", 1e8, 2.0});
  t.add_link(Link{"a-m", "a", "m", 1e8, 1.0});
  t.add_link(Link{"m-b", "m", "b", 1e8, 1.0});
  return t;
}

}  // namespace

TEST(Route, SameEndpointIsEmpty) {
  auto t = two_sites();
  EXPECT_TRUE(t.route("se-a", "se-a").empty());
}

TEST(Route, SameSiteNeedsNoLink) {
  auto t = flat_site(2, 1);
  EXPECT_TRUE(t.route("se0", "ce1").empty());
}

TEST(Route, SingleLink) {
  GridTopology t;
  t.add_site("a");
  t.add_site("b");
  t.add_link(Link{"ab", "a", "b", 1.0, 0.5});
  EXPECT_EQ(t.route("a", "b"), std::vector<std::string>{"ab"});
}

TEST(Route, EqualLatencyPrefersSmallerLinkSequence) {
  auto t = two_sites();
  EXPECT_EQ(t.route("se-a", "se-b"), (std::vector<std::string>{"a-m", "m-b"}));
  EXPECT_EQ(t.route("se-b", "se-a"), (std::vector<std::string>{"m-b", "a-m"}));
}

TEST(Route, UnknownAndUnreachable) {
  auto t = two_sites();
  t.add_site("island");
  EXPECT_THROW(t.route("se-a", "nowhere"), ConfigError);
  EXPECT_THROW(t.route("se-a", "island"), RouteError);
  EXPECT_FALSE(t.reachable("se-a", "island"));
}

TEST(TransferTime, LatencyOnlyForEmptyPayload) {
  Link l1{"l1", "a", "b", 1e8, 0.1};
  Link l2{"l2", "b", "c", 1e8, 0.2};
  std::vector<const Link*> path{&l1, &l2};
  EXPECT_DOUBLE_EQ(transfer_time(0, path, std::vector<int>{0, 0}), 0.3);
}

TEST(TransferTime, IdleLink) {
  Link l{"l", "a", "b", 1e8, 0.0};
  std::vector<const Link*> path{&l};
  EXPECT_EQ(transfer_time(1e9, path, std::vector<int>{0}), 10.0);
}

TEST(TransferTime, BottleneckDecides) {
  Link fast{"f", "a", "b", 1e8, 0.0};
  Link slow{"s", "b", "c", 5e7, 0.0};
  std::vector<const Link*> path{&fast, &slow};
  EXPECT_EQ(transfer_time(1e9, path, std::vector<int>{0, 0}), 20.0);
}

TEST(TransferTime, FairShareAmongActiveTransfers) {
  Link l{"l", "a", "b", 1e8, 0.0};
  std::vector<const Link*> path{&l};
  EXPECT_EQ(transfer_time(1e9, path, std::vector<int>{3}), 40.0);
}

TEST(CeQueue, FifoOrder) {
  auto t = flat_site(1, 1);
  const auto& ce = t.ce("ce0");
  CeState st(ce);
  st.enqueue(ce, "", QueueEntry{0, "A", "u", "vo", 10, 1, 1, SimTime(1)});
  st.enqueue(ce, "", QueueEntry{1, "B", "u", "vo", 10, 1, 1, SimTime(2)});
  EXPECT_EQ(st.next_job(ce, SimTime(2))->job_id, "A");
}

TEST(CeQueue, PriorityWeightFirst) {
  GridTopology t = flat_site(0, 1);
  ComputingElement ce;
  ce.id = "ce";
  ce.site = "s0";
  ce.queues.push_back(NamedQueue{"prio", QueueDiscipline::priority, {{"gold", 5.0}, {"tin", 1.0}}});
  t.add_ce(ce);
  CeState st(t.ce("ce"));
  st.enqueue(t.ce("ce"), "prio", QueueEntry{0, "low", "x", "tin", 10, 1, 1, SimTime(1)});
  st.enqueue(t.ce("ce"), "prio", QueueEntry{1, "high", "y", "gold", 10, 1, 1, SimTime(2)});
  EXPECT_EQ(st.next_job(t.ce("ce"), SimTime(2))->job_id, "high");
}

TEST(CeQueue, EmptyCeHasNoNextJob) {
  auto t = flat_site(1, 2);
  CeState st(t.ce("ce0"));
  EXPECT_FALSE(st.next_job(t.ce("ce0"), SimTime(0)).has_value());
}

TEST(CeQueue, OrderIsAFunctionOfWeightTimeAndId) {
  auto t = flat_site(1, 1);
  const auto& ce = t.ce("ce0");
  std::vector<QueueEntry> entries{{0, "c", "u", "vo", 1, 1, 1, SimTime(5)},
                                  {1, "a", "u", "vo", 1, 1, 1, SimTime(5)},
                                  {2, "b", "u", "vo", 1, 1, 1, SimTime(1)}};
  CeState one(ce), two(ce);
  for (const auto& e : entries) one.enqueue(ce, "", e);
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) two.enqueue(ce, "", *it);
  std::vector<std::string> o1, o2;
  for (const auto* e : one.ordered()) o1.push_back(e->job_id);
  for (const auto* e : two.ordered()) o2.push_back(e->job_id);
  EXPECT_EQ(o1, (std::vector<std::string>{"b", "a", "c"}));
  EXPECT_EQ(o1, o2);
}

TEST(CeQueue, VoCapSkipsAndHeadOfLineBlocks) {
  GridTopology t = flat_site(0, 1);
  ComputingElement ce;
  ce.id = "ce";
  ce.site = "s0";
  ce.nodes = 2;
  ce.vo_shares = {{"atlas", 0.5}, {"cms", 0.5}};
  t.add_ce(ce);
  const auto& c = t.ce("ce");
  CeState st(c);
  st.occupy(99, "atlas", {0}, SimTime(100));
  st.enqueue(c, "", QueueEntry{0, "a2", "u", "atlas", 1, 1, 1, SimTime(1)});
  st.enqueue(c, "", QueueEntry{1, "c1", "u", "cms", 1, 1, 1, SimTime(2)});
  EXPECT_EQ(st.next_job(c, SimTime(3))->job_id, "c1");

  // A capped head is skipped, but a head waiting for nodes blocks the queue.
  ComputingElement open = c;
  open.vo_shares.clear();
  CeState blocked(open);
  blocked.occupy(98, "cms", {0}, SimTime(100));
  blocked.enqueue(open, "", QueueEntry{0, "wide", "u", "atlas", 1, 2, 1, SimTime(1)});
  blocked.enqueue(open, "", QueueEntry{1, "narrow", "u", "cms", 1, 1, 1, SimTime(2)});
  EXPECT_FALSE(blocked.next_job(open, SimTime(3)).has_value());
}

TEST(CeQueue, NodeConservation) {
  auto t = flat_site(1, 4);
  CeState st(t.ce("ce0"));
  st.occupy(0, "vo", {0, 2}, SimTime(10));
  EXPECT_EQ(st.busy_nodes() + st.idle_nodes(), 4);
  EXPECT_THROW(st.occupy(1, "vo", {2}, SimTime(10)), IntegrityError);
  st.release(0);
  EXPECT_EQ(st.idle_nodes(), 4);
  EXPECT_THROW(st.release(0), IntegrityError);
}

TEST(Reservation, ConflictAndPastWindow) {
  auto t = flat_site(1, 1);
  const auto& ce = t.ce("ce0");
  CeState st(ce);
  EXPECT_EQ(st.reserve(ce, SimTime(0), 1, SimTime(100), SimTime(200), 1), std::vector<int>{0});
  EXPECT_THROW(st.reserve(ce, SimTime(0), 1, SimTime(150), SimTime(250), 2), ReservationError);
  EXPECT_NO_THROW(st.reserve(ce, SimTime(0), 1, SimTime(200), SimTime(300), 3));
  EXPECT_THROW(st.reserve(ce, SimTime(50), 1, SimTime(40), SimTime(60), 4), ReservationError);
  EXPECT_TRUE(st.reservations_disjoint());
  EXPECT_TRUE(st.pick_nodes(SimTime(150), 1, 10).empty());
  EXPECT_EQ(st.pick_nodes(SimTime(150), 1, 10, 1), std::vector<int>{0});
}

TEST(Replica, LookupPlaceDrop) {
  auto t = two_sites();
  t.replica_place("d", "se-a", 40);
  t.replica_place("d", "se-b", 40);
  auto reps = t.replica_lookup("d");
  ASSERT_EQ(reps.size(), 2u);
  EXPECT_EQ(reps[0].se, "se-a");
  EXPECT_EQ(reps[1].se, "se-b");
  EXPECT_TRUE(t.replica_lookup("unknown").empty());
  EXPECT_TRUE(t.storage_conserved());
  t.replica_drop("d", "se-a");
  EXPECT_EQ(t.se("se-a").used, 0u);
  EXPECT_THROW(t.replica_drop("d", "se-b", [](const std::string&) { return true; }),
               IntegrityError);
  EXPECT_TRUE(t.storage_conserved());
}

TEST(Replica, NoRoomIsAnError) {
  GridTopology t;
  t.add_site("s");
  const Bytes gb = 1'000'000'000ULL;
  t.add_se(StorageElement{"se", "s", 5 * gb, 0});
  EXPECT_THROW(t.replica_place("big", "se", 10 * gb), PlacementError);
  EXPECT_TRUE(t.replica_lookup("big").empty());
}

TEST(ReconfigureLink, NewCapacityAppliesToLaterTransfers) {
  auto t = two_sites();
  t.reconfigure_link("a-m", 5e7);
  const auto path = t.links_of(t.route("se-a", "se-b"));
  EXPECT_EQ(transfer_time(1e9, path, std::vector<int>{0, 0}), 20.0 + 2.0);
  EXPECT_THROW(t.reconfigure_link("a-m", 0.0), ConfigError);
  EXPECT_THROW(t.reconfigure_link("nope", 1.0), ConfigError);
}

TEST(ReconfigureLink, InFlightTransferKeepsItsCompletion) {
  auto topo = two_sites();
  ComputingElement ce;
  ce.id = "ce-b";
  ce.site = "b";
  topo.add_ce(ce);
  topo.add_ui("ui0", "a");
  topo.replica_place("d", "se-a", 1'000'000'000ULL);
  auto job = testkit::make_job("j", 0.5, 1);
  job.spec.inputs = {"d"};
  auto cfg = testkit::make_config(topo, {job}, 100);
  // Greedy on an all-zero table always picks action 0: the cut fires at
  // t = 0, 1 and 2 (7e7, 4e7, 1e7 left on a-m) and is rejected afterwards.
  cfg.rl = GridRLSettings{};
  cfg.rl->actions = {ReconfigurationAction{ActionType::shift_bandwidth, "a-m", "z-direct", "", "", 3e7},
                     ReconfigurationAction{}};
  cfg.rl->learning.epsilon_start = cfg.rl->learning.epsilon_end = 0.0;
  cfg.rl->episode_length = 1.0;
  Simulation sim(cfg);
  sim.run();
  ASSERT_EQ(sim.transfers().size(), 1u);
  const auto& tr = sim.transfers()[0];
  EXPECT_EQ(tr.links, (std::vector<std::string>{"a-m", "m-b"}));
  Link am{"a-m", "a", "m", 7e7, 1.0};
  Link mb{"m-b", "m", "b", 1e8, 1.0};
  std::vector<const Link*> path{&am, &mb};
  EXPECT_EQ(tr.start, SimTime(0.5));
  EXPECT_EQ(tr.end, SimTime(0.5) + transfer_time(1e9, path, std::vector<int>{0, 0}));
  EXPECT_EQ(sim.topology().link("a-m").capacity, 1e8 - 3 * 3e7);
  EXPECT_EQ(sim.job("j").status, JobStatus::done);
}

TEST(Topology, DuplicateIdsRejected) {
  auto t = flat_site(1, 1);
  ComputingElement dup;
  dup.id = "se0";
  dup.site = "s0";
  EXPECT_THROW(t.add_ce(dup), ConfigError);
  EXPECT_THROW(t.add_link(Link{"ce0", "s0", "s0", 1, 0}), ConfigError);
}

#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace mobit;
using namespace mobit::harness;

namespace {

std::shared_ptr<const CompiledDocument> compiled(const Document& d, Millis lead = 0) {
  LinearizeOptions o;
  o.prefetch_lead_ms = lead;
  return std::make_shared<const CompiledDocument>(compile_document(d, o));
}

}  // namespace

TEST(VirtualClock, FiresInTimeOrder) {
  VirtualClock c;
  std::vector<int> order;
  c.schedule(30, [&] { order.push_back(3); });
  c.schedule(10, [&] { order.push_back(1); });
  c.schedule(10, [&] { order.push_back(2); });
  c.schedule(10, [&] { order.push_back(0); }, 0);
  c.advance_to(20);
  EXPECT_EQ(order, (std::vector<int>{1, 2, 0}));
  EXPECT_EQ(c.now(), 20u);
  EXPECT_THROW(c.schedule(5, [] {}), Error);
  EXPECT_TRUE(c.step());
  EXPECT_EQ(c.now(), 30u);
  EXPECT_FALSE(c.step());
}

TEST(VirtualClock, PriorityBreaksTies) {
  VirtualClock c;
  std::vector<int> order;
  c.schedule(10, [&] { order.push_back(1); }, 1);
  c.schedule(10, [&] { order.push_back(0); }, 0);
  while (c.step()) {
  }
  EXPECT_EQ(order, (std::vector<int>{0, 1}));
}

TEST(ShapedLink, LoneMessageDelay) {
  ShapedLink link({200, 1000000, 0}, 1);
  EXPECT_EQ(link.delivery_time(0, 1000000, 0), 1200u);
  ShapedLink l2({7, 3, 0}, 1);
  EXPECT_EQ(l2.delivery_time(100, 1, 0), 100u + 7u + 334u);
}

TEST(ShapedLink, BackToBackChunksAddUp) {
  ShapedLink link({0, 3000, 0}, 1);
  Millis last = 0;
  for (int i = 0; i < 3; ++i) last = link.delivery_time(0, 1000, i);
  EXPECT_EQ(last, 1000u);  // 3000 bytes at 3000 B/s, no per-chunk rounding
}

TEST(ShapedLink, JitterIsBoundedAndSeeded) {
  ShapedLink a({0, 1000000000, 50}, 9), b({0, 1000000000, 50}, 9), c({0, 1000000000, 50}, 10);
  bool differs = false;
  for (std::uint64_t k = 0; k < 200; ++k) {
    EXPECT_LE(a.jitter(k), 50u);
    EXPECT_EQ(a.jitter(k), b.jitter(k));
    differs = differs || a.jitter(k) != c.jitter(k);
  }
  EXPECT_TRUE(differs);
}

TEST(ShapedLink, DeliveriesNeverReorder) {
  ShapedLink link({10, 100000, 40}, 3);
  Millis last = 0;
  for (std::uint64_t k = 0; k < 500; ++k) {
    const Millis at = link.delivery_time(k * 3, k % 7 * 100, k);
    EXPECT_GE(at, last);
    last = at;
  }
}

TEST(Simulate, DeterministicTraces) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto d = testkit::random_document(seed);
    const NetModel net{30, 20000, 25};
    const auto a = simulate(d, net, {}, seed);
    const auto b = simulate(d, net, {}, seed);
    EXPECT_EQ(format_trace(a.trace), format_trace(b.trace)) << seed;
    EXPECT_EQ(a.outcome, PlaybackOutcome::finished) << seed << " " << a.error;
    EXPECT_TRUE(validate_trace(a.trace).empty()) << seed;
  }
}

TEST(Simulate, AllBytesArriveInOrder) {
  const auto d = load_document_file(testkit::fixture("three-level.mobit.xml"));
  const auto c = compiled(d, 500);
  SimulationOptions o;
  o.net = {15, 40000, 10};
  o.server.chunk_size = 1000;
  const auto r = simulate(c, o);
  ASSERT_EQ(r.outcome, PlaybackOutcome::finished);
  std::map<std::uint32_t, std::uint64_t> next_offset;
  for (const auto& rec : r.trace) {
    if (rec.action != TraceAction::receive) continue;
    const auto off = std::stoull(std::string(*detail_field(rec.detail, "offset")));
    EXPECT_EQ(off, next_offset[*rec.subject]);
    next_offset[*rec.subject] += std::stoull(std::string(*detail_field(rec.detail, "bytes")));
  }
  for (const auto& o2 : c->script.header.ref_table.objects) EXPECT_EQ(next_offset[o2.local_ref], o2.payload_size);
}

TEST(Simulate, LatencyHiding) {
  const auto d = testkit::big_element_doc(1000000, 2000, 4000);
  const NetModel net{200, 1000000, 0};
  SimulationOptions o;
  o.net = net;
  const auto cold = simulate(compiled(d, 0), o);
  EXPECT_EQ(cold.stall_count, 1u);
  EXPECT_EQ(cold.total_stall_ms, 1200u);
  const auto warm = simulate(compiled(d, 1300), o);
  EXPECT_EQ(warm.stall_count, 0u);
  EXPECT_EQ(warm.outcome, PlaybackOutcome::finished);
}

// With an accurate estimate and a lead covering the plan, no show stalls.
// Elements are spaced so their transfers never share the link.
TEST(Simulate, PlannedLeadNeverStalls) {
  std::mt19937_64 rng(21);
  auto u = [&](std::uint64_t lo, std::uint64_t hi) { return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng); };
  for (int round = 0; round < 60; ++round) {
    const NetModel net{u(0, 300), u(1000, 2000000), 0};
    Document d;
    d.id = "p";
    d.root = ObjectId{1};
    d.canvas = {640, 480};
    std::vector<PlaylistEntry> playlist;
    Millis show = u(0, 3000);
    const std::size_t n = u(1, 4);
    std::uint64_t max_plan = 0;
    std::vector<std::uint64_t> sizes;
    for (std::size_t i = 0; i < n; ++i) {
      sizes.push_back(u(1, 200000));
      max_plan = std::max(max_plan, net.latency_ms + transfer_ms(sizes.back(), net.bytes_per_s));
    }
    for (std::size_t i = 0; i < n; ++i) {
      Element e;
      e.id = ObjectId{10 + i};
      e.mime_type = parse_mime("image/png");
      e.payload = InlinePayload{testkit::pattern_bytes(sizes[i], static_cast<std::uint32_t>(i))};
      d.elements[e.id] = e;
      PlaylistEntry pe;
      pe.target = e.id;
      pe.time = TimeSpec::finite(show, 100);
      playlist.push_back(pe);
      show += max_plan + 1 + u(0, 500);
    }
    d.total_duration = show + 100;
    d.mobs[d.root] = Mob{d.root, "root", playlist};
    LinearizeOptions lo;
    lo.prefetch_lead_ms = max_plan;
    auto c = std::make_shared<const CompiledDocument>(compile_document(d, lo));
    ASSERT_TRUE(underprovisioned_refs(c->script, buffer_plan(c->script, {net.latency_ms, net.bytes_per_s})).empty());
    SimulationOptions o;
    o.net = net;
    o.seed = round;
    const auto r = simulate(c, o);
    EXPECT_EQ(r.stall_count, 0u) << "round " << round;
    EXPECT_EQ(r.outcome, PlaybackOutcome::finished);
  }
}

TEST(Simulate, TextSenderDeliversAtModeledTime) {
  const auto d = load_document_file(testkit::fixture("live.mobit.xml"));
  SimulationOptions o;
  o.net = {40, 100000, 0};
  auto c = compiled(d, 500);
  Simulation sim(c, o);
  auto sender = std::make_shared<TextSender>();
  sim.attach(sender, {7001}, R"({"listen": false})");
  sim.at(4000, [&] { sender->send("hello"); });
  const auto r = sim.run();
  ASSERT_EQ(r.outcome, PlaybackOutcome::finished);
  std::vector<TraceRecord> delivered;
  for (const auto& rec : r.trace) {
    if (rec.action == TraceAction::stream_deliver) delivered.push_back(rec);
  }
  ASSERT_EQ(delivered.size(), 1u);
  EXPECT_EQ(delivered[0].wall_at, 4000u + 40u + transfer_ms(5, 100000));
  EXPECT_EQ(*detail_field(delivered[0].detail, "text"), "hello");
}

TEST(Simulate, StreamEventWithoutVisibleTarget) {
  const auto d = load_document_file(testkit::fixture("single.mobit.xml"));
  Simulation sim(compiled(d), {});
  auto sender = std::make_shared<TextSender>();
  sim.attach(sender, {7001}, R"({"listen": false})");
  sim.at(2000, [&] { sender->send("nobody"); });
  const auto r = sim.run();
  EXPECT_EQ(r.outcome, PlaybackOutcome::finished);
  EXPECT_EQ(r.stall_count, 0u);
  bool warned = false;
  for (const auto& rec : r.trace) warned = warned || rec.action == TraceAction::warning;
  EXPECT_TRUE(warned);
}

#include <gtest/gtest.h>

#include "support.hpp"

using namespace mobit;
using mobit::testkit::fixture;

namespace {

ObjectId id(std::uint64_t v) { return ObjectId{v}; }

Document base(Millis total = 10000) {
  Document d;
  d.id = "t";
  d.root = id(1);
  d.canvas = {800, 600};
  d.total_duration = total;
  d.mobs[id(1)] = Mob{id(1), "root", {}};
  return d;
}

void add_element(Document& d, std::uint64_t eid, std::size_t size = 4) {
  Element e;
  e.id = id(eid);
  e.mime_type = parse_mime("image/png");
  e.payload = InlinePayload{Bytes(size, 0xab)};
  d.elements[e.id] = e;
}

PlaylistEntry entry(std::uint64_t target, Region r = Region::full(), TimeSpec t = {}) {
  PlaylistEntry e;
  e.target = id(target);
  e.region = r;
  e.time = t;
  return e;
}

Document nested() {
  auto d = base();
  d.mobs[id(2)] = Mob{id(2), "m", {entry(3, {0, 0, 0.5, 1}, TimeSpec::open(1000))}};
  d.mobs[id(1)].playlist.push_back(entry(2, {0.5, 0.5, 0.5, 0.5}, TimeSpec::finite(2000, 4000)));
  add_element(d, 3);
  return d;
}

template <typename T>
const T& kind(const FlowEvent& ev) {
  return std::get<T>(ev.kind);
}

}  // namespace

TEST(ComposeRegion, Identity) {
  EXPECT_EQ(compose_region({0, 0, 800, 600}, Region::full()), (AbsRect{0, 0, 800, 600}));
}

TEST(ComposeRegion, Offset) {
  EXPECT_EQ(compose_region({400, 300, 400, 300}, {0, 0, 0.5, 1}), (AbsRect{400, 300, 200, 300}));
}

TEST(ComposeRegion, ClampIntersects) {
  EXPECT_EQ(compose_region({0, 0, 100, 100}, {0.8, 0, 0.5, 1}), (AbsRect{80, 0, 20, 100}));
  EXPECT_EQ(compose_region({0, 0, 100, 100}, {0.8, 0, 0.5, 1}, ContainmentMode::strict), (AbsRect{80, 0, 50, 100}));
}

TEST(ComposeInterval, OpenRunsToParentEnd) {
  EXPECT_EQ(*compose_interval({2000, 6000}, TimeSpec::open(1000)), (Interval{3000, 6000}));
}

TEST(ComposeInterval, ClampClips) {
  EXPECT_EQ(*compose_interval({0, 10000}, TimeSpec::finite(9000, 5000)), (Interval{9000, 10000}));
  EXPECT_THROW(compose_interval({0, 10000}, TimeSpec::finite(9000, 5000), ContainmentMode::strict), TemporalOverrun);
}

TEST(ComposeInterval, PastParentEndIsEmpty) {
  EXPECT_FALSE(compose_interval({0, 5000}, TimeSpec::finite(6000, 100)));
}

TEST(LocalRefs, FirstVisitRule) {
  auto d = base();
  add_element(d, 5);
  add_element(d, 6);
  d.mobs[id(1)].playlist = {entry(5), entry(6), entry(5)};
  const auto t = assign_local_refs(d);
  ASSERT_EQ(t.objects.size(), 2u);
  EXPECT_EQ(t.objects[0].id, id(5));
  EXPECT_EQ(t.objects[1].id, id(6));
  ASSERT_EQ(t.instances.size(), 3u);
  EXPECT_EQ(t.instances[0].local_ref, 0u);
  EXPECT_EQ(t.instances[1].local_ref, 1u);
  EXPECT_EQ(t.instances[2].local_ref, 0u);
  EXPECT_EQ(t.instances[2].path, (std::vector<std::uint32_t>{2}));
}

TEST(LocalRefs, MobsGetNoRef) {
  auto d = base();
  add_element(d, 5);
  d.mobs[id(2)] = Mob{id(2), "", {entry(5)}};
  d.mobs[id(1)].playlist = {entry(2)};
  const auto t = assign_local_refs(d);
  ASSERT_EQ(t.objects.size(), 1u);
  EXPECT_EQ(t.objects[0].id, id(5));
  EXPECT_EQ(t.instances[0].path, (std::vector<std::uint32_t>{0, 0}));
}

TEST(LocalRefs, EmptyRoot) {
  const auto t = assign_local_refs(base());
  EXPECT_TRUE(t.objects.empty());
  EXPECT_TRUE(t.instances.empty());
}

TEST(Linearize, SingleFullSpanElement) {
  auto d = base();
  add_element(d, 5);
  d.mobs[id(1)].playlist = {entry(5)};
  const auto s = linearize(d);
  ASSERT_EQ(s.events.size(), 4u);
  EXPECT_EQ(s.events[0].at, 0u);
  EXPECT_EQ(kind<event::Prefetch>(s.events[0]).local_ref, 0u);
  EXPECT_EQ(s.events[1].at, 0u);
  const auto& show = kind<event::Show>(s.events[1]);
  EXPECT_EQ(show.rect, (AbsRect{0, 0, 800, 600}));
  EXPECT_EQ(show.z, 0u);
  EXPECT_EQ(s.events[2].at, 10000u);
  EXPECT_EQ(kind<event::Hide>(s.events[2]).instance_id, 0u);
  EXPECT_EQ(s.events[3].at, 10000u);
  EXPECT_TRUE(std::holds_alternative<event::End>(s.events[3].kind));
}

TEST(Linearize, NestedPlacement) {
  const auto s = linearize(nested());
  std::optional<FlowEvent> show, hide;
  for (const auto& ev : s.events) {
    if (std::holds_alternative<event::Show>(ev.kind)) show = ev;
    if (std::holds_alternative<event::Hide>(ev.kind)) hide = ev;
  }
  ASSERT_TRUE(show && hide);
  EXPECT_EQ(show->at, 3000u);
  EXPECT_EQ(kind<event::Show>(*show).rect, (AbsRect{400, 300, 200, 300}));
  EXPECT_EQ(hide->at, 6000u);
}

TEST(Linearize, SameStartKeepsDocumentOrder) {
  auto d = base();
  add_element(d, 5);
  add_element(d, 6);
  d.mobs[id(1)].playlist = {entry(6, Region::full(), TimeSpec::open(100)), entry(5, Region::full(), TimeSpec::open(100))};
  const auto s = linearize(d);
  std::vector<event::Show> shows;
  for (const auto& ev : s.events) {
    if (const auto* sh = std::get_if<event::Show>(&ev.kind)) shows.push_back(*sh);
  }
  ASSERT_EQ(shows.size(), 2u);
  EXPECT_EQ(shows[0].z, 0u);
  EXPECT_EQ(shows[1].z, 1u);
  EXPECT_EQ(s.header.ref_table.objects[shows[0].local_ref].id, id(6));
}

TEST(Linearize, PrefetchLead) {
  auto d = base();
  add_element(d, 5);
  add_element(d, 6);
  d.mobs[id(1)].playlist = {entry(5, Region::full(), TimeSpec::open(2000)), entry(6, Region::full(), TimeSpec::open(300))};
  LinearizeOptions o;
  o.prefetch_lead_ms = 500;
  const auto s = linearize(d, o);
  std::map<std::uint32_t, Millis> prefetch;
  for (const auto& ev : s.events) {
    if (const auto* p = std::get_if<event::Prefetch>(&ev.kind)) prefetch[p->local_ref] = ev.at;
  }
  EXPECT_EQ(prefetch.at(0), 1500u);
  EXPECT_EQ(prefetch.at(1), 0u);
}

TEST(Linearize, ClampDropsWithWarning) {
  auto d = base(5000);
  add_element(d, 5);
  d.mobs[id(1)].playlist = {entry(5, Region::full(), TimeSpec::finite(6000, 100)), entry(5, {1.2, 0, 0.5, 1})};
  const auto c = compile(d);
  EXPECT_EQ(c.warnings.size(), 2u);
  EXPECT_TRUE(c.script.header.ref_table.objects.empty());
  ASSERT_EQ(c.script.events.size(), 1u);
  EXPECT_THROW(compile(d, {ContainmentMode::strict}), ContainmentError);
}

TEST(Linearize, RejectsCycles) {
  auto d = base();
  d.mobs[id(1)].playlist = {entry(1)};
  EXPECT_THROW(linearize(d), CycleError);
}

TEST(Oracle, NestedScene) {
  const auto d = nested();
  const auto at3000 = scene_at(d, 3000);
  ASSERT_EQ(at3000.size(), 1u);
  EXPECT_EQ(at3000[0].rect, (AbsRect{400, 300, 200, 300}));
  EXPECT_TRUE(scene_at(d, 6000).empty());
  EXPECT_TRUE(scene_at(base(), 0).empty());
}

TEST(Oracle, ReplayMatchesAtBoundaries) {
  const auto d = load_document_file(fixture("nested.mobit.xml"));
  const auto s = linearize(d);
  for (Millis t : {0, 2999, 3000, 5999, 6000}) {
    EXPECT_TRUE(same_scene(replay(s, t), scene_at(d, t))) << t;
  }
  EXPECT_TRUE(replay(s, d.total_duration).empty());
  EXPECT_TRUE(replay(FlowScript{}, 0).empty());
}

TEST(Oracle, RandomDocumentsAgree) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    testkit::GenOptions opt;
    opt.overruns = seed % 2 == 1;
    const auto d = testkit::random_document(seed, opt);
    const auto s = linearize(d);
    for (Millis t : probe_times(s)) ASSERT_TRUE(same_scene(replay(s, t), scene_at(d, t))) << seed << " t=" << t;
  }
}

TEST(ScriptText, RoundTrip) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    LinearizeOptions o;
    o.prefetch_lead_ms = seed * 37;
    const auto s = linearize(testkit::random_document(seed), o);
    const auto text = serialize_script(s);
    const auto back = parse_script(text);
    EXPECT_EQ(serialize_script(back), text);
    for (Millis t : probe_times(s)) ASSERT_TRUE(same_scene(replay(back, t), replay(s, t), 1e-3)) << seed;
  }
}

TEST(ScriptText, RejectsGarbage) {
  EXPECT_THROW(parse_script(""), MalformedScript);
  EXPECT_THROW(parse_script("mobit-flow 2\n"), MalformedScript);
  const auto good = serialize_script(linearize(nested()));
  EXPECT_THROW(parse_script(good.substr(0, good.size() / 2)), MalformedScript);
}

TEST(ScriptText, FixedDecimals) {
  EXPECT_EQ(format_fixed3(400), "400.000");
  EXPECT_EQ(format_fixed3(0.0005), "0.000");
  EXPECT_EQ(format_fixed3(0.0015), "0.002");
  EXPECT_EQ(format_fixed3(-1.25), "-1.250");
}

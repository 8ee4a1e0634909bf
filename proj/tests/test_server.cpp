#include <gtest/gtest.h>

#include "support.hpp"

using namespace mobit;

namespace {

std::shared_ptr<const CompiledDocument> compiled(const Document& d, LinearizeOptions o = {}) {
  return std::make_shared<const CompiledDocument>(compile_document(d, o));
}

std::vector<wire::Message> drain(ServerSession& s) {
  std::vector<wire::Message> out;
  while (auto m = s.next_outgoing()) out.push_back(std::move(*m));
  return out;
}

// Two elements: ref 0 shown at 5000, ref 1 shown at 1000, so ref 1 is
// prefetched first.
Document two_elements() {
  Document d;
  d.id = "two";
  d.root = ObjectId{1};
  d.canvas = {800, 600};
  d.total_duration = 10000;
  for (std::uint64_t id : {2, 3}) {
    Element e;
    e.id = ObjectId{id};
    e.mime_type = parse_mime("image/png");
    e.payload = InlinePayload{testkit::pattern_bytes(100, static_cast<std::uint32_t>(id))};
    d.elements[e.id] = e;
  }
  PlaylistEntry a;
  a.target = ObjectId{2};
  a.time.start_offset = 5000;
  PlaylistEntry b;
  b.target = ObjectId{3};
  b.time.start_offset = 1000;
  d.mobs[d.root] = Mob{d.root, "root", {a, b}};
  return d;
}

}  // namespace

TEST(Server, HelloGetsInfoThenScript) {
  DocStore store;
  auto doc = compiled(two_elements());
  store.add(doc);
  ServerSession s(store, {});
  s.receive(wire::Hello{1, "two"});
  const auto out = drain(s);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_TRUE(std::holds_alternative<wire::ServerInfo>(out[0]));
  EXPECT_EQ(std::get<wire::Script>(out[1]).text, doc->script_text);
}

TEST(Server, UnknownDocument) {
  DocStore store;
  store.add(compiled(two_elements()));
  ServerSession s(store, {});
  s.receive(wire::Hello{1, "nope"});
  const auto out = drain(s);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(std::get<wire::ErrorMsg>(out[0]).code, 1);
  EXPECT_TRUE(s.finished());
}

TEST(Server, EmptyIdSelectsOnlyDocument) {
  DocStore store;
  store.add(compiled(two_elements()));
  ServerSession s(store, {});
  s.receive(wire::Hello{1, ""});
  EXPECT_EQ(drain(s).size(), 2u);
}

TEST(Server, ChunksLargeElement) {
  const auto d = testkit::big_element_doc(150 * 1024, 0, 1000);
  DocStore store;
  store.add(compiled(d));
  ServerSession s(store, {});
  s.receive(wire::Hello{1, "big"});
  drain(s);
  s.receive(wire::DataReq{0});
  const auto out = drain(s);
  ASSERT_EQ(out.size(), 3u);
  const std::uint64_t offsets[] = {0, 65536, 131072};
  Bytes joined;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& c = std::get<wire::DataChunk>(out[i]);
    EXPECT_EQ(c.offset, offsets[i]);
    EXPECT_EQ(c.total, 153600u);
    joined.insert(joined.end(), c.bytes.begin(), c.bytes.end());
  }
  EXPECT_EQ(joined, std::get<InlinePayload>(d.elements.at(ObjectId{2}).payload).bytes);
}

TEST(Server, AnswersInPrefetchOrder) {
  DocStore store;
  auto doc = compiled(two_elements());
  store.add(doc);
  const auto& objects = doc->script.header.ref_table.objects;
  ASSERT_EQ(objects[0].id, ObjectId{2});  // document order
  ASSERT_LT(doc->prefetch_rank[1], doc->prefetch_rank[0]);
  ServerSession s(store, {10});
  s.receive(wire::Hello{1, "two"});
  drain(s);
  s.receive(wire::DataReq{0});
  s.receive(wire::DataReq{1});
  const auto out = drain(s);
  ASSERT_EQ(out.size(), 20u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(std::get<wire::DataChunk>(out[i]).local_ref, 1u);
  for (std::size_t i = 10; i < 20; ++i) EXPECT_EQ(std::get<wire::DataChunk>(out[i]).local_ref, 0u);
}

TEST(Server, UnknownRef) {
  DocStore store;
  store.add(compiled(two_elements()));
  ServerSession s(store, {});
  s.receive(wire::Hello{1, "two"});
  drain(s);
  s.receive(wire::DataReq{9});
  const auto out = drain(s);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(std::get<wire::ErrorMsg>(out[0]).code, 2);
}

TEST(Server, ProtocolViolations) {
  DocStore store;
  store.add(compiled(two_elements()));
  {
    ServerSession s(store, {});
    s.receive(wire::DataReq{0});
    EXPECT_EQ(std::get<wire::ErrorMsg>(drain(s).at(0)).code, 3);
    EXPECT_TRUE(s.finished());
  }
  {
    ServerSession s(store, {});
    s.receive(wire::Hello{1, "two"});
    drain(s);
    s.receive(wire::Hello{1, "two"});
    EXPECT_EQ(std::get<wire::ErrorMsg>(drain(s).at(0)).code, 3);
  }
  {
    ServerSession s(store, {});
    s.receive(wire::Script{"x"});
    EXPECT_EQ(std::get<wire::ErrorMsg>(drain(s).at(0)).code, 3);
  }
}

TEST(Server, ByeEndsSession) {
  DocStore store;
  store.add(compiled(two_elements()));
  ServerSession s(store, {});
  s.receive(wire::Hello{1, "two"});
  s.receive(wire::DataReq{0});
  s.receive(wire::Bye{});
  drain(s);
  EXPECT_TRUE(s.finished());
}

TEST(Server, StreamEventsOnlyAfterSubscribe) {
  DocStore store;
  store.add(compiled(two_elements()));
  ServerSession s(store, {}, [] { return std::vector<wire::SubserverDescriptor>{{"text-sender", {7001}, "text/x-live"}}; });
  s.push_stream_event({7001, 1, {'a'}});
  EXPECT_FALSE(s.has_outgoing());
  s.receive(wire::Hello{1, "two"});
  s.receive(wire::DataReq{0});
  s.push_stream_event({7001, 2, {'b'}});
  const auto out = drain(s);
  ASSERT_GE(out.size(), 4u);
  EXPECT_EQ(std::get<wire::ServerInfo>(out[0]).subservers.at(0).ports, (std::vector<std::uint16_t>{7001}));
  EXPECT_TRUE(std::holds_alternative<wire::StreamEvent>(out[2]));
}

TEST(Server, StoreBackedPayloads) {
  const auto dir = std::filesystem::temp_directory_path() / "mobit-store-test";
  std::filesystem::create_directories(dir);
  write_file(dir / "clip.bin", "0123456789");
  auto d = testkit::big_element_doc(1, 0, 1000);
  d.elements.at(ObjectId{2}).payload = StoreKey{"clip.bin"};
  const auto c = compile_document(d, {}, DirectoryStore(dir));
  EXPECT_EQ(c.script.header.ref_table.objects.at(0).payload_size, 10u);
  EXPECT_EQ(c.payloads.at(0).size(), 10u);
  EXPECT_THROW(DirectoryStore(dir).load("../etc/passwd"), IoError);
  EXPECT_THROW(compile_document(d), IoError);
}

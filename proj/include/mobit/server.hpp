#pragma once

#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mobit/docio.hpp"
#include "mobit/flow.hpp"
#include "mobit/wire.hpp"

namespace mobit {

/// A document ready to serve: compiled once at load.
struct CompiledDocument {
  Document doc;
  FlowScript script;
  std::string script_text;
  std::vector<Bytes> payloads;               // by local ref
  std::vector<std::uint32_t> prefetch_rank;  // by local ref, order of its Prefetch event
  std::vector<std::string> warnings;
};

struct InlineOnlyStore {
  Bytes load(const std::string& key) const { throw IoError("no payload store for key " + key); }
};

template <typename Store = InlineOnlyStore>
CompiledDocument compile_document(Document doc, LinearizeOptions opts = {}, const Store& store = {}) {
  std::map<ObjectId, Bytes> loaded;
  opts.payload_size = [&](const Element& e) -> std::uint64_t {
    auto it = loaded.find(e.id);
    if (it == loaded.end()) it = loaded.emplace(e.id, load_payload(e, store)).first;
    return it->second.size();
  };
  Compiled compiled = compile(doc, opts);

  CompiledDocument out;
  out.script = std::move(compiled.script);
  out.warnings = std::move(compiled.warnings);
  out.script_text = serialize_script(out.script);
  const auto& objects = out.script.header.ref_table.objects;
  out.payloads.resize(objects.size());
  out.prefetch_rank.resize(objects.size());
  for (const auto& o : objects) out.payloads[o.local_ref] = std::move(loaded.at(o.id));
  std::uint32_t rank = 0;
  for (const auto& ev : out.script.events) {
    if (const auto* p = std::get_if<event::Prefetch>(&ev.kind)) out.prefetch_rank[p->local_ref] = rank++;
  }
  out.doc = std::move(doc);
  return out;
}

/// Read-only after startup.
class DocStore {
 public:
  void add(std::shared_ptr<const CompiledDocument> doc) {
    const std::string id = doc->doc.id;
    docs_[id] = std::move(doc);
  }

  /// An empty id selects the only document when exactly one is loaded.
  std::shared_ptr<const CompiledDocument> find(const std::string& id) const {
    if (id.empty() && docs_.size() == 1) return docs_.begin()->second;
    auto it = docs_.find(id);
    return it == docs_.end() ? nullptr : it->second;
  }

  std::size_t size() const { return docs_.size(); }

 private:
  std::map<std::string, std::shared_ptr<const CompiledDocument>> docs_;
};

struct ServerOptions {
  std::size_t chunk_size = 64 * 1024;
};

using SubserverInfoFn = std::function<std::vector<wire::SubserverDescriptor>()>;

/// Protocol state of one client session, independent of transport. Frames
/// go in through receive(); replies come out of next_outgoing() in the
/// order they must be written.
class ServerSession {
 public:
  ServerSession(const DocStore& store, ServerOptions opts, SubserverInfoFn subservers = {})
      : store_(store), opts_(opts), subservers_(std::move(subservers)) {
    if (opts_.chunk_size == 0) opts_.chunk_size = 1;
  }

  void receive(const wire::Message& msg) {
    if (closing_) return;
    if (const auto* hello = std::get_if<wire::Hello>(&msg)) {
      if (doc_) return fail(wire::ErrorCode::protocol_violation, "repeated HELLO");
      doc_ = store_.find(hello->doc_id);
      if (!doc_) return fail(wire::ErrorCode::unknown_doc, "unknown document '" + hello->doc_id + "'");
      wire::ServerInfo info;
      if (subservers_) info.subservers = subservers_();
      control_.push_back(std::move(info));
      control_.push_back(wire::Script{doc_->script_text});
      subscribed_ = true;
    } else if (const auto* req = std::get_if<wire::DataReq>(&msg)) {
      if (!doc_) return fail(wire::ErrorCode::protocol_violation, "DATA_REQ before HELLO");
      if (req->local_ref >= doc_->payloads.size()) {
        return fail(wire::ErrorCode::unknown_ref, "unknown ref " + std::to_string(req->local_ref));
      }
      pending_.try_emplace(doc_->prefetch_rank[req->local_ref], Transfer{req->local_ref, 0});
    } else if (std::holds_alternative<wire::Bye>(msg)) {
      closing_ = true;
      pending_.clear();
      streams_.clear();
    } else {
      fail(wire::ErrorCode::protocol_violation, std::string("unexpected ") + std::string(wire::type_name(msg)));
    }
  }

  /// Codec-level failure on the inbound stream.
  void protocol_violation(const std::string& why) {
    if (!closing_) fail(wire::ErrorCode::protocol_violation, why);
  }

  /// Dropped unless this session has already been sent SERVER_INFO.
  void push_stream_event(wire::StreamEvent ev) {
    if (subscribed_ && !closing_) streams_.push_back(std::move(ev));
  }

  /// Control frames first, then live events, then the next data chunk of
  /// the pending request that comes earliest in prefetch order.
  std::optional<wire::Message> next_outgoing() {
    if (!control_.empty()) {
      wire::Message m = std::move(control_.front());
      control_.pop_front();
      return m;
    }
    if (!streams_.empty()) {
      wire::Message m = std::move(streams_.front());
      streams_.pop_front();
      return m;
    }
    if (pending_.empty()) return std::nullopt;
    auto it = pending_.begin();
    Transfer& t = it->second;
    const Bytes& payload = doc_->payloads[t.local_ref];
    const std::size_t n = std::min<std::size_t>(opts_.chunk_size, payload.size() - t.offset);
    wire::DataChunk chunk{t.local_ref, t.offset, payload.size(),
                          Bytes(payload.begin() + static_cast<std::ptrdiff_t>(t.offset),
                                payload.begin() + static_cast<std::ptrdiff_t>(t.offset + n))};
    t.offset += n;
    if (t.offset >= payload.size()) pending_.erase(it);
    return chunk;
  }

  bool has_outgoing() const { return !control_.empty() || !streams_.empty() || !pending_.empty(); }
  /// Nothing more will be written; the transport should close.
  bool finished() const { return closing_ && !has_outgoing(); }
  const CompiledDocument* document() const { return doc_.get(); }

 private:
  struct Transfer {
    std::uint32_t local_ref;
    std::uint64_t offset;
  };

  void fail(wire::ErrorCode code, const std::string& why) {
    pending_.clear();
    streams_.clear();
    control_.push_back(wire::ErrorMsg{static_cast<std::uint16_t>(code), why});
    closing_ = true;
  }

  const DocStore& store_;
  ServerOptions opts_;
  SubserverInfoFn subservers_;
  std::shared_ptr<const CompiledDocument> doc_;
  std::deque<wire::Message> control_;
  std::deque<wire::StreamEvent> streams_;
  std::map<std::uint32_t, Transfer> pending_;  // keyed by prefetch rank
  bool subscribed_ = false;
  bool closing_ = false;
};

}  // namespace mobit

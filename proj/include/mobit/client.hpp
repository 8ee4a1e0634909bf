#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mobit/flow.hpp"
#include "mobit/wire.hpp"

namespace mobit {

enum class PlayerState : std::uint8_t { init, buffering, playing, stalled, paused, finished };

inline std::string_view to_string(PlayerState s) {
  static constexpr std::string_view names[] = {"Init", "Buffering", "Playing", "Stalled", "Paused", "Finished"};
  return names[static_cast<std::size_t>(s)];
}

inline bool legal_transition(PlayerState from, PlayerState to) {
  using S = PlayerState;
  return (from == S::init && to == S::buffering) || (from == S::buffering && to == S::playing) ||
         (from == S::playing && to == S::stalled) || (from == S::stalled && to == S::playing) ||
         (from == S::playing && to == S::paused) || (from == S::paused && to == S::playing) ||
         (from == S::playing && to == S::finished);
}

enum class TraceAction : std::uint8_t {
  receive,
  compose,
  display,
  remove,
  stall,
  resume,
  state_change,
  stream_deliver,
  warning,
};

inline std::string_view to_string(TraceAction a) {
  static constexpr std::string_view names[] = {"Receive", "Compose",     "Display",       "Delete", "Stall",
                                               "Resume",  "StateChange", "StreamDeliver", "Warning"};
  return names[static_cast<std::size_t>(a)];
}

inline std::optional<TraceAction> trace_action_from_string(std::string_view s) {
  for (std::uint8_t i = 0; i <= static_cast<std::uint8_t>(TraceAction::warning); ++i) {
    if (to_string(static_cast<TraceAction>(i)) == s) return static_cast<TraceAction>(i);
  }
  return std::nullopt;
}

/// One line of playback trace. `wall_at` is the client's session clock
/// (virtual time under the harness); presentation time, where relevant,
/// is carried in the detail as t=<ms>.
struct TraceRecord {
  Millis wall_at = 0;
  TraceAction action = TraceAction::warning;
  std::optional<std::uint32_t> subject;  // local ref or instance id, by action
  std::string detail;

  bool operator==(const TraceRecord&) const = default;
};

inline std::string format_trace_line(const TraceRecord& r) {
  std::string s = std::to_string(r.wall_at);
  s += '\t';
  s += to_string(r.action);
  s += '\t';
  s += r.subject ? std::to_string(*r.subject) : "-";
  s += '\t';
  s += r.detail;
  s += '\n';
  return s;
}

inline std::string format_trace(const std::vector<TraceRecord>& trace) {
  std::string out;
  for (const auto& r : trace) out += format_trace_line(r);
  return out;
}

inline std::vector<TraceRecord> parse_trace(std::string_view text) {
  std::vector<TraceRecord> out;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty()) continue;
    std::string_view f[4];
    std::string_view rest = line;
    for (int i = 0; i < 3; ++i) {
      const auto tab = rest.find('\t');
      if (tab == std::string_view::npos) throw Error("trace line needs four tab-separated fields");
      f[i] = rest.substr(0, tab);
      rest = rest.substr(tab + 1);
    }
    f[3] = rest;
    TraceRecord r;
    r.wall_at = detail::parse_uint<Millis>(f[0], "trace time");
    const auto action = trace_action_from_string(f[1]);
    if (!action) throw Error("unknown trace action '" + std::string(f[1]) + "'");
    r.action = *action;
    if (f[2] != "-") r.subject = detail::parse_uint<std::uint32_t>(f[2], "trace subject");
    r.detail = std::string(f[3]);
    out.push_back(std::move(r));
  }
  return out;
}

/// Value of `key=` in a space-separated detail string.
inline std::optional<std::string_view> detail_field(std::string_view detail, std::string_view key) {
  std::size_t pos = 0;
  while (pos < detail.size()) {
    const auto sp = detail.find(' ', pos);
    const auto tok = detail.substr(pos, sp == std::string_view::npos ? std::string_view::npos : sp - pos);
    if (tok.size() > key.size() && tok.substr(0, key.size()) == key && tok[key.size()] == '=') {
      return tok.substr(key.size() + 1);
    }
    if (sp == std::string_view::npos) break;
    pos = sp + 1;
  }
  return std::nullopt;
}

struct BufferEntry {
  std::uint32_t local_ref = 0;
  std::uint64_t expected = 0;
  std::uint64_t received = 0;
  bool complete = false;
  Millis last_use_at = 0;
  Bytes data;
};

using Buffer = std::map<std::uint32_t, BufferEntry>;

inline std::uint64_t buffered_bytes(const Buffer& buffer) {
  std::uint64_t n = 0;
  for (const auto& [ref, e] : buffer) n += e.received;
  return n;
}

/// Frees refs whose last Hide lies at or before `now` (presentation time),
/// largest first, until the buffer fits the budget. Refs still needed are
/// never freed, even if the budget stays exceeded.
inline std::vector<std::uint32_t> evict(Buffer& buffer, Millis now, std::uint64_t budget,
                                        const std::vector<Millis>& last_hide_at) {
  std::vector<std::uint32_t> freed;
  std::uint64_t used = buffered_bytes(buffer);
  if (used <= budget) return freed;
  std::vector<const BufferEntry*> candidates;
  for (const auto& [ref, e] : buffer) {
    if (e.complete && ref < last_hide_at.size() && last_hide_at[ref] <= now) candidates.push_back(&e);
  }
  std::sort(candidates.begin(), candidates.end(), [](const BufferEntry* a, const BufferEntry* b) {
    return a->received != b->received ? a->received > b->received : a->local_ref < b->local_ref;
  });
  for (const BufferEntry* e : candidates) {
    if (used <= budget) break;
    used -= e->received;
    freed.push_back(e->local_ref);
  }
  for (auto ref : freed) buffer.erase(ref);
  return freed;
}

struct NetEstimate {
  Millis latency_ms = 0;
  std::uint64_t bytes_per_s = 1;
};

inline Millis transfer_ms(std::uint64_t bytes, std::uint64_t bytes_per_s) {
  const unsigned __int128 num = static_cast<unsigned __int128>(bytes) * 1000u;
  return static_cast<Millis>((num + bytes_per_s - 1) / bytes_per_s);
}

/// Lead time each ref needs ahead of its first Show: latency plus transfer.
inline std::vector<Millis> buffer_plan(const FlowScript& script, const NetEstimate& net) {
  std::vector<Millis> lead;
  for (const auto& o : script.header.ref_table.objects) {
    lead.push_back(net.latency_ms + transfer_ms(o.payload_size, net.bytes_per_s));
  }
  return lead;
}

/// Refs whose scheduled prefetch leaves less time than the plan requires.
/// Time-zero prefetches are exempt: they complete before the clock starts.
inline std::vector<std::uint32_t> underprovisioned_refs(const FlowScript& script, const std::vector<Millis>& plan) {
  std::vector<std::optional<Millis>> prefetch_at(plan.size()), first_show(plan.size());
  for (const auto& ev : script.events) {
    if (const auto* p = std::get_if<event::Prefetch>(&ev.kind)) prefetch_at[p->local_ref] = ev.at;
    if (const auto* s = std::get_if<event::Show>(&ev.kind); s && !first_show[s->local_ref]) {
      first_show[s->local_ref] = ev.at;
    }
  }
  std::vector<std::uint32_t> out;
  for (std::uint32_t ref = 0; ref < plan.size(); ++ref) {
    if (!prefetch_at[ref] || !first_show[ref] || *prefetch_at[ref] == 0) continue;
    if (*first_show[ref] - *prefetch_at[ref] < plan[ref]) out.push_back(ref);
  }
  return out;
}

enum class PlaybackOutcome : std::uint8_t { running, finished, connection_lost, protocol_error, server_error, stopped };

inline std::string_view to_string(PlaybackOutcome o) {
  static constexpr std::string_view names[] = {"running",        "finished",     "connection-lost",
                                               "protocol-error", "server-error", "stopped"};
  return names[static_cast<std::size_t>(o)];
}

struct PlaybackReport {
  std::uint32_t stall_count = 0;
  Millis total_stall_ms = 0;
  Millis startup_ms = 0;  // Buffering before the clock first started
  std::uint64_t max_buffer_bytes = 0;
  std::uint32_t budget_violations = 0;
  PlayerState final_state = PlayerState::init;
  PlaybackOutcome outcome = PlaybackOutcome::running;
  std::string error;
  std::vector<TraceRecord> trace;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

struct PlayerOptions {
  std::string doc_id;
  std::uint64_t buffer_budget = std::numeric_limits<std::uint64_t>::max();
};

/// Headless player. Transport and clock are supplied by the caller: frames
/// arrive through receive(), the timeline moves through advance(), and
/// requests leave through take_outgoing(). All times passed in are session
/// clock milliseconds.
class Player {
 public:
  explicit Player(PlayerOptions opts = {}) : opts_(std::move(opts)) {}

  void connect(Millis now) {
    now_ = now;
    outgoing_.push_back(wire::Hello{1, opts_.doc_id});
  }

  /// Events due strictly before `now` run first; data arriving at t is
  /// usable by a Show due at t.
  void receive(const wire::Message& msg, Millis now) {
    if (done()) return;
    if (now > 0) run_due(now - 1);
    now_ = std::max(now_, now);
    if (done()) return;
    try {
      std::visit([&](const auto& m) { on(m); }, msg);
    } catch (const Error& e) {
      abort(PlaybackOutcome::protocol_error, e.what());
      return;
    }
    advance(now_);
  }

  void advance(Millis now) {
    now_ = std::max(now_, now);
    run_due(now_);
  }

  /// Session time at which the next timeline event falls due.
  std::optional<Millis> next_due() const {
    if (state_ != PlayerState::playing || cursor_ >= script_.events.size()) return std::nullopt;
    return base_ + script_.events[cursor_].at;
  }

  std::vector<wire::Message> take_outgoing() { return std::exchange(outgoing_, {}); }

  void pause(Millis now) {
    advance(now);
    if (state_ != PlayerState::playing) return;
    pause_started_ = now_;
    change_state(PlayerState::paused, now_);
  }

  void play(Millis now) {
    now_ = std::max(now_, now);
    if (state_ != PlayerState::paused) return;
    base_ += now_ - pause_started_;
    change_state(PlayerState::playing, now_);
    advance(now_);
  }

  void stop(Millis now) {
    now_ = std::max(now_, now);
    if (done()) return;
    outcome_ = PlaybackOutcome::stopped;
    outgoing_.push_back(wire::Bye{});
  }

  void connection_lost(Millis now) {
    now_ = std::max(now_, now);
    if (!done()) abort(PlaybackOutcome::connection_lost, "connection lost in state " + std::string(to_string(state_)));
  }

  PlayerState state() const { return state_; }
  bool done() const { return outcome_ != PlaybackOutcome::running; }
  const FlowScript& script() const { return script_; }
  const Buffer& buffer() const { return buffer_; }
  const std::vector<TraceRecord>& trace() const { return trace_; }

  void set_server_info(wire::ServerInfo info) { server_info_ = std::move(info); }
  const wire::ServerInfo& get_server_info() const { return server_info_; }

  /// Current presentation position.
  Millis position() const {
    const Millis frozen = state_ == PlayerState::stalled ? stall_started_
                          : state_ == PlayerState::paused ? pause_started_
                                                          : now_;
    return frozen > base_ ? frozen - base_ : 0;
  }

  PlaybackReport report() const {
    PlaybackReport r;
    r.stall_count = stall_count_;
    r.total_stall_ms = total_stall_ms_;
    r.startup_ms = startup_ms_;
    r.max_buffer_bytes = max_buffer_bytes_;
    r.budget_violations = budget_violations_;
    r.final_state = state_;
    r.outcome = outcome_;
    r.error = error_;
    r.trace = trace_;
    return r;
  }

 private:
  void on(const wire::ServerInfo& info) { set_server_info(info); }

  void on(const wire::Script& s) {
    if (state_ != PlayerState::init) throw ProtocolError("second SCRIPT");
    script_ = parse_script(s.text);
    const auto& objects = script_.header.ref_table.objects;
    last_hide_at_.assign(objects.size(), 0);
    shows_left_.assign(objects.size(), 0);
    for (const auto& ev : script_.events) {
      if (const auto* h = std::get_if<event::Hide>(&ev.kind)) {
        const auto ref = script_.header.ref_table.instances.at(h->instance_id).local_ref;
        last_hide_at_[ref] = std::max(last_hide_at_[ref], ev.at);
      } else if (const auto* sh = std::get_if<event::Show>(&ev.kind)) {
        ++shows_left_.at(sh->local_ref);
      }
    }
    change_state(PlayerState::buffering, now_);
    buffering_started_ = now_;
    // Everything prefetched at time zero is needed before the clock starts.
    while (cursor_ < script_.events.size() && script_.events[cursor_].at == 0 &&
           std::holds_alternative<event::Prefetch>(script_.events[cursor_].kind)) {
      request(std::get<event::Prefetch>(script_.events[cursor_].kind).local_ref);
      ++cursor_;
    }
    maybe_start();
  }

  void on(const wire::DataChunk& c) {
    auto it = buffer_.find(c.local_ref);
    if (it == buffer_.end()) throw ProtocolError("unrequested chunk for ref " + std::to_string(c.local_ref));
    BufferEntry& e = it->second;
    if (e.complete || c.offset != e.received || c.total != e.expected) {
      throw ProtocolError("out-of-order chunk for ref " + std::to_string(c.local_ref));
    }
    e.data.insert(e.data.end(), c.bytes.begin(), c.bytes.end());
    e.received += c.bytes.size();
    e.complete = e.received == e.expected;
    record(now_, TraceAction::receive, c.local_ref,
           "offset=" + std::to_string(c.offset) + " bytes=" + std::to_string(c.bytes.size()) +
               " total=" + std::to_string(c.total));
    max_buffer_bytes_ = std::max(max_buffer_bytes_, buffered_bytes(buffer_));
    if (!e.complete) return;
    if (state_ == PlayerState::buffering) {
      maybe_start();
    } else if (state_ == PlayerState::stalled && stalled_ref_ == c.local_ref) {
      const Millis stalled = now_ - stall_started_;
      total_stall_ms_ += stalled;
      base_ += stalled;
      record(now_, TraceAction::resume, stalled_instance_,
             "t=" + std::to_string(position()) + " stalled_ms=" + std::to_string(stalled));
      change_state(PlayerState::playing, now_);
    }
    enforce_budget();
  }

  void on(const wire::StreamEvent& ev) {
    const wire::SubserverDescriptor* source = nullptr;
    for (const auto& d : server_info_.subservers) {
      if (std::find(d.ports.begin(), d.ports.end(), ev.port) != d.ports.end()) source = &d;
    }
    const std::string text = escape(std::string(ev.bytes.begin(), ev.bytes.end()));
    if (!source) {
      record(now_, TraceAction::warning, ev.port, "unknown port, event dropped");
      return;
    }
    bool delivered = false;
    for (const auto& [instance, ref] : visible_) {
      if (script_.header.ref_table.objects[ref].mime_type.str() != source->target_mime) continue;
      record(now_, TraceAction::stream_deliver, instance,
             "port=" + std::to_string(ev.port) + " at=" + std::to_string(ev.at) + " text=" + text);
      delivered = true;
    }
    if (!delivered) record(now_, TraceAction::warning, ev.port, "no visible " + source->target_mime + " instance");
  }

  void on(const wire::ErrorMsg& e) {
    abort(PlaybackOutcome::server_error, "server error " + std::to_string(e.code) + ": " + e.message);
  }

  void on(const wire::Bye&) { abort(PlaybackOutcome::connection_lost, "server closed the session"); }

  template <typename M>
  void on(const M&) {
    throw ProtocolError("unexpected frame from server");
  }

  static std::string escape(std::string_view s) {
    std::string out;
    for (char c : s) {
      switch (c) {
        case '\t': out += "\\t"; break;
        case '\n': out += "\\n"; break;
        case '\r': out += "\\r"; break;
        case '\\': out += "\\\\"; break;
        default: out += c;
      }
    }
    return out;
  }

  void request(std::uint32_t ref) {
    if (buffer_.count(ref)) return;
    const auto size = script_.header.ref_table.objects.at(ref).payload_size;
    BufferEntry& e = buffer_[ref];
    e.local_ref = ref;
    e.expected = size;
    e.complete = size == 0;
    if (size > 0) outgoing_.push_back(wire::DataReq{ref});
  }

  void maybe_start() {
    for (const auto& [ref, e] : buffer_) {
      if (!e.complete) return;
    }
    base_ = now_;
    startup_ms_ = now_ - buffering_started_;
    change_state(PlayerState::playing, now_);
  }

  void run_due(Millis limit) {
    try {
      while (state_ == PlayerState::playing && cursor_ < script_.events.size()) {
        const FlowEvent& ev = script_.events[cursor_];
        const Millis due = base_ + ev.at;
        if (due > limit) break;
        now_ = std::max(now_, due);
        if (!execute(ev, due)) break;
        ++cursor_;
      }
    } catch (const Error& e) {
      abort(PlaybackOutcome::protocol_error, e.what());
    }
  }

  // Returns false when the timeline has to wait at this event.
  bool execute(const FlowEvent& ev, Millis due) {
    const std::string t = "t=" + std::to_string(ev.at);
    if (const auto* p = std::get_if<event::Prefetch>(&ev.kind)) {
      request(p->local_ref);
    } else if (const auto* s = std::get_if<event::Show>(&ev.kind)) {
      auto it = buffer_.find(s->local_ref);
      if (it == buffer_.end()) throw ProtocolError("show before prefetch");
      const std::string ref = " ref=" + std::to_string(s->local_ref);
      if (!it->second.complete) {
        ++stall_count_;
        stall_started_ = due;
        stalled_ref_ = s->local_ref;
        stalled_instance_ = s->instance_id;
        record(due, TraceAction::stall, s->instance_id, t + ref);
        change_state(PlayerState::stalled, due);
        return false;
      }
      it->second.last_use_at = ev.at;
      --shows_left_[s->local_ref];
      record(due, TraceAction::compose, s->instance_id,
             t + ref + " rect=" + format_fixed3(s->rect.x) + "," + format_fixed3(s->rect.y) + "," +
                 format_fixed3(s->rect.w) + "," + format_fixed3(s->rect.h) + " z=" + std::to_string(s->z));
      record(due, TraceAction::display, s->instance_id, t + ref);
      visible_[s->instance_id] = s->local_ref;
    } else if (const auto* h = std::get_if<event::Hide>(&ev.kind)) {
      auto it = visible_.find(h->instance_id);
      const std::uint32_t ref = it == visible_.end() ? 0 : it->second;
      if (it != visible_.end()) visible_.erase(it);
      record(due, TraceAction::remove, h->instance_id, t + " ref=" + std::to_string(ref));
      enforce_budget(ev.at);
    } else {
      change_state(PlayerState::finished, due);
      outcome_ = PlaybackOutcome::finished;
      outgoing_.push_back(wire::Bye{});
    }
    return true;
  }

  void enforce_budget(std::optional<Millis> at = std::nullopt) {
    if (opts_.buffer_budget == std::numeric_limits<std::uint64_t>::max()) return;
    evict(buffer_, at.value_or(position()), opts_.buffer_budget, last_hide_at_);
    if (buffered_bytes(buffer_) > opts_.buffer_budget) ++budget_violations_;
  }

  void change_state(PlayerState to, Millis at) {
    if (!legal_transition(state_, to)) {
      throw ProtocolError("illegal transition " + std::string(to_string(state_)) + "->" + std::string(to_string(to)));
    }
    record(at, TraceAction::state_change, std::nullopt,
           std::string(to_string(state_)) + "->" + std::string(to_string(to)));
    state_ = to;
  }

  void abort(PlaybackOutcome outcome, std::string why) {
    outcome_ = outcome;
    error_ = std::move(why);
  }

  void record(Millis at, TraceAction action, std::optional<std::uint32_t> subject, std::string detail) {
    trace_.push_back({at, action, subject, std::move(detail)});
  }

  PlayerOptions opts_;
  PlayerState state_ = PlayerState::init;
  PlaybackOutcome outcome_ = PlaybackOutcome::running;
  std::string error_;
  FlowScript script_;
  std::size_t cursor_ = 0;
  Millis now_ = 0;
  Millis base_ = 0;  // session time of presentation zero, shifted by stalls and pauses
  Millis stall_started_ = 0;
  Millis pause_started_ = 0;
  std::uint32_t stalled_ref_ = 0;
  std::uint32_t stalled_instance_ = 0;
  Buffer buffer_;
  std::map<std::uint32_t, std::uint32_t> visible_;  // instance -> ref
  std::vector<Millis> last_hide_at_;
  std::vector<std::uint32_t> shows_left_;
  std::vector<wire::Message> outgoing_;
  std::vector<TraceRecord> trace_;
  wire::ServerInfo server_info_;
  std::uint32_t stall_count_ = 0;
  Millis total_stall_ms_ = 0;
  Millis startup_ms_ = 0;
  Millis buffering_started_ = 0;
  std::uint64_t max_buffer_bytes_ = 0;
  std::uint32_t budget_violations_ = 0;
};

/// Checks a trace against the player's contract: state changes follow the
/// legal transition relation, each instance goes Compose -> Display ->
/// Delete, and all data for a ref arrives before its first Compose.
inline std::vector<std::string> validate_trace(const std::vector<TraceRecord>& trace) {
  std::vector<std::string> problems;
  PlayerState state = PlayerState::init;
  std::map<std::uint32_t, int> stage;  // instance -> 1 composed, 2 displayed, 3 deleted
  std::set<std::string> composed_refs;
  Millis last_at = 0;

  auto state_from = [](std::string_view s) -> std::optional<PlayerState> {
    for (std::uint8_t i = 0; i <= static_cast<std::uint8_t>(PlayerState::finished); ++i) {
      if (to_string(static_cast<PlayerState>(i)) == s) return static_cast<PlayerState>(i);
    }
    return std::nullopt;
  };

  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& r = trace[i];
    const std::string where = "record " + std::to_string(i + 1) + ": ";
    if (r.wall_at < last_at) problems.push_back(where + "time went backwards");
    last_at = r.wall_at;
    switch (r.action) {
      case TraceAction::state_change: {
        const auto arrow = r.detail.find("->");
        const auto from = arrow == std::string::npos ? std::nullopt : state_from(std::string_view(r.detail).substr(0, arrow));
        const auto to = arrow == std::string::npos ? std::nullopt : state_from(std::string_view(r.detail).substr(arrow + 2));
        if (!from || !to) {
          problems.push_back(where + "unreadable state change '" + r.detail + "'");
        } else if (*from != state || !legal_transition(*from, *to)) {
          problems.push_back(where + "illegal transition " + r.detail + " from " + std::string(to_string(state)));
        } else {
          state = *to;
        }
        break;
      }
      case TraceAction::receive:
        if (r.subject && composed_refs.count(std::to_string(*r.subject))) {
          problems.push_back(where + "data for ref " + std::to_string(*r.subject) + " after its first Compose");
        }
        break;
      case TraceAction::compose:
      case TraceAction::display:
      case TraceAction::remove: {
        if (!r.subject) {
          problems.push_back(where + "lifecycle record without instance");
          break;
        }
        const int want = r.action == TraceAction::compose ? 0 : r.action == TraceAction::display ? 1 : 2;
        int& s = stage[*r.subject];
        if (s != want) {
          problems.push_back(where + std::string(to_string(r.action)) + " out of order for instance " +
                             std::to_string(*r.subject));
        }
        s = want + 1;
        if (r.action == TraceAction::compose) {
          if (auto ref = detail_field(r.detail, "ref")) composed_refs.insert(std::string(*ref));
        }
        break;
      }
      default: break;
    }
  }
  return problems;
}

/// Instances displayed and not yet deleted once every lifecycle record with
/// presentation time <= t has been applied.
inline std::set<std::uint32_t> displayed_at(const std::vector<TraceRecord>& trace, Millis t) {
  std::set<std::uint32_t> shown;
  for (const auto& r : trace) {
    if (r.action != TraceAction::display && r.action != TraceAction::remove) continue;
    const auto at = detail_field(r.detail, "t");
    if (!at || detail::parse_uint<Millis>(*at, "t") > t || !r.subject) continue;
    if (r.action == TraceAction::display) {
      shown.insert(*r.subject);
    } else {
      shown.erase(*r.subject);
    }
  }
  return shown;
}

}  // namespace mobit

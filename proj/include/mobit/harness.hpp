#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "mobit/client.hpp"
#include "mobit/server.hpp"
#include "mobit/subserver.hpp"
#include "mobit/wire.hpp"

namespace mobit::harness {

/// Shapes the server-to-client path. Requests travel instantly, so one
/// fetch costs latency plus transfer, the same quantity buffer_plan
/// predicts. Only content bytes are charged (chunk data, script text,
/// stream payloads); fixed protocol headers are free.
struct NetModel {
  Millis latency_ms = 0;
  std::uint64_t bytes_per_s = 1'000'000'000'000;
  Millis jitter_ms = 0;  // uniform in [0, jitter_ms], seeded per message
};

/// Discrete-event clock. Time only moves when an event fires; ties fire
/// by priority (lower first), then in scheduling order.
class VirtualClock {
 public:
  using Action = std::function<void()>;

  Millis now() const { return now_; }

  void schedule(Millis at, Action action, std::uint8_t priority = 0) {
    if (at < now_) throw Error("cannot schedule into the past");
    queue_.emplace(Key{at, priority, seq_++}, std::move(action));
  }

  /// Fires the earliest pending event. Returns false when idle.
  bool step() {
    if (queue_.empty()) return false;
    auto node = queue_.extract(queue_.begin());
    now_ = node.key().at;
    node.mapped()();
    return true;
  }

  /// Fires every event due at or before t, then sets the clock to t.
  void advance_to(Millis t) {
    while (!queue_.empty() && queue_.begin()->first.at <= t) step();
    now_ = std::max(now_, t);
  }

  bool idle() const { return queue_.empty(); }
  std::optional<Millis> next_at() const {
    if (queue_.empty()) return std::nullopt;
    return queue_.begin()->first.at;
  }

 private:
  struct Key {
    Millis at;
    std::uint8_t priority;
    std::uint64_t seq;
    auto operator<=>(const Key&) const = default;
  };
  Millis now_ = 0;
  std::uint64_t seq_ = 0;
  std::map<Key, Action> queue_;
};

/// Reliable ordered link with a serialising bottleneck. Time inside the link
/// is kept in units of 1/bytes_per_s ms so back-to-back chunks add up
/// without per-message rounding.
class ShapedLink {
 public:
  ShapedLink(NetModel net, std::uint64_t seed) : net_(net), seed_(seed) {
    if (net_.bytes_per_s == 0) throw Error("bandwidth must be positive");
  }

  /// Delivery time of a message handed to the link at `sent_at`. A lone
  /// message arrives after latency + ceil(bytes*1000/bps) + jitter.
  Millis delivery_time(Millis sent_at, std::uint64_t bytes, std::uint64_t jitter_key) {
    using u128 = unsigned __int128;
    const u128 bps = net_.bytes_per_s;
    const u128 start = std::max<u128>(u128{sent_at} * bps, busy_until_);
    busy_until_ = start + u128{bytes} * 1000u;
    const auto serialised = static_cast<Millis>((busy_until_ + bps - 1) / bps);
    const Millis at = std::max(last_delivery_, serialised + net_.latency_ms + jitter(jitter_key));
    last_delivery_ = at;
    return at;
  }

  Millis jitter(std::uint64_t key) const {
    if (net_.jitter_ms == 0) return 0;
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
    std::mt19937_64 rng(seq);
    return std::uniform_int_distribution<Millis>(0, net_.jitter_ms)(rng);
  }

  const NetModel& model() const { return net_; }

 private:
  NetModel net_;
  std::uint64_t seed_;
  unsigned __int128 busy_until_ = 0;
  Millis last_delivery_ = 0;
};

/// Bytes the link charges for a message.
inline std::uint64_t charged_bytes(const wire::Message& m) {
  if (const auto* c = std::get_if<wire::DataChunk>(&m)) return c->bytes.size();
  if (const auto* s = std::get_if<wire::StreamEvent>(&m)) return s->bytes.size();
  if (const auto* s = std::get_if<wire::Script>(&m)) return s->text.size();
  return 0;
}

struct SimulationOptions {
  NetModel net;
  std::uint64_t seed = 0;
  PlayerOptions client;
  ServerOptions server;
  Millis time_limit = std::numeric_limits<Millis>::max();
};

/// One server session and one player on a shaped in-process transport,
/// driven entirely by a VirtualClock.
class Simulation {
 public:
  Simulation(std::shared_ptr<const CompiledDocument> doc, SimulationOptions opts)
      : opts_(std::move(opts)), link_(opts_.net, opts_.seed), player_(opts_.client) {
    store_.add(std::move(doc));
    session_ = std::make_unique<ServerSession>(store_, opts_.server, [this] { return descriptors(); });
  }

  VirtualClock& clock() { return clock_; }
  const ShapedLink& link() const { return link_; }
  Player& player() { return player_; }

  /// Wires a sub-server into the simulated server. Its clock is the virtual
  /// clock and its events enter the session at the current virtual time.
  void attach(std::shared_ptr<Subserver> plugin, std::vector<std::uint16_t> ports, std::string_view init_blob = "") {
    plugin->set_ports(std::move(ports));
    DataHandles handles;
    handles.clock = [this] { return clock_.now(); };
    handles.emit = [this](std::uint16_t port, std::uint64_t at, Bytes bytes) {
      session_->push_stream_event({port, at, std::move(bytes)});
      pump_server();
    };
    plugin->set_data(std::move(handles), init_blob);
    plugins_.push_back(std::move(plugin));
  }

  /// Runs `action` at virtual time `at`.
  void at(Millis t, std::function<void()> action) { clock_.schedule(t, std::move(action)); }

  PlaybackReport run() {
    clock_.schedule(0, [this] {
      player_.connect(clock_.now());
      flush_player();
    });
    while (!player_.done() && clock_.step()) {
      if (clock_.now() > opts_.time_limit) break;
    }
    return player_.report();
  }

 private:
  std::vector<wire::SubserverDescriptor> descriptors() const {
    std::vector<wire::SubserverDescriptor> out;
    for (const auto& p : plugins_) out.push_back(p->descriptor());
    return out;
  }

  std::uint64_t jitter_key(const wire::Message& m) {
    std::uint64_t key = std::uint64_t{wire::type_code(m)} << 56;
    if (const auto* c = std::get_if<wire::DataChunk>(&m)) {
      key ^= (std::uint64_t{c->local_ref} << 32) ^ c->offset;
    } else if (std::holds_alternative<wire::StreamEvent>(m)) {
      key ^= stream_seq_++;
    }
    return key;
  }

  void pump_server() {
    while (auto m = session_->next_outgoing()) {
      const Millis at = link_.delivery_time(clock_.now(), charged_bytes(*m), jitter_key(*m));
      clock_.schedule(at, [this, msg = std::move(*m)] {
        player_.receive(msg, clock_.now());
        flush_player();
      });
    }
  }

  // Hands the player's requests to the server and arms its next wake-up.
  void flush_player() {
    player_.advance(clock_.now());
    for (auto& m : player_.take_outgoing()) {
      session_->receive(m);
      pump_server();
    }
    if (auto due = player_.next_due()) {
      const Millis at = std::max(*due, clock_.now());
      if (wakeups_.insert(at).second) {
        clock_.schedule(
            at,
            [this, at] {
              wakeups_.erase(at);
              flush_player();
            },
            1);
      }
    }
  }

  SimulationOptions opts_;
  VirtualClock clock_;
  ShapedLink link_;
  DocStore store_;
  std::unique_ptr<ServerSession> session_;
  Player player_;
  std::vector<std::shared_ptr<Subserver>> plugins_;
  std::set<Millis> wakeups_;
  std::uint64_t stream_seq_ = 0;
};

inline PlaybackReport simulate(std::shared_ptr<const CompiledDocument> doc, const SimulationOptions& opts) {
  Simulation sim(std::move(doc), opts);
  return sim.run();
}

inline PlaybackReport simulate(const Document& doc, const NetModel& net, const PlayerOptions& client,
                               std::uint64_t seed, const LinearizeOptions& compile_opts = {}) {
  SimulationOptions opts;
  opts.net = net;
  opts.seed = seed;
  opts.client = client;
  return simulate(std::make_shared<const CompiledDocument>(compile_document(doc, compile_opts)), opts);
}

}  // namespace mobit::harness

#pragma once

#include <boost/asio.hpp>

#include <chrono>
#include <condition_variable>
#include <deque>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "mobit/client.hpp"
#include "mobit/server.hpp"
#include "mobit/subserver.hpp"
#include "mobit/wire.hpp"

namespace mobit {

namespace asio = boost::asio;
using asio::ip::tcp;

/// Serves compiled documents over TCP. Each session gets a reader and a
/// writer thread around a ServerSession; live events from sub-servers are
/// fanned out to every session that has received SERVER_INFO.
class TcpServer {
 public:
  TcpServer(std::shared_ptr<const DocStore> store, ServerOptions opts, std::uint16_t port,
            const std::string& host = "127.0.0.1")
      : store_(std::move(store)), opts_(opts), acceptor_(io_) {
    const tcp::endpoint endpoint(asio::ip::make_address(host), port);
    acceptor_.open(endpoint.protocol());
    acceptor_.set_option(tcp::acceptor::reuse_address(true));
    acceptor_.bind(endpoint);
    acceptor_.listen();
  }

  ~TcpServer() { stop(); }

  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  std::uint16_t port() const { return acceptor_.local_endpoint().port(); }

  /// Starts a sub-server with emit wired to this server's fan-out.
  void attach(std::shared_ptr<Subserver> plugin, std::vector<std::uint16_t> ports, std::string_view init_blob = "") {
    plugin->set_ports(std::move(ports));
    const auto started = std::chrono::steady_clock::now();
    DataHandles handles;
    handles.clock = [started] {
      return static_cast<std::uint64_t>(
          std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count());
    };
    handles.emit = [this](std::uint16_t port, std::uint64_t at, Bytes bytes) {
      broadcast(wire::StreamEvent{port, at, std::move(bytes)});
    };
    plugin->set_data(std::move(handles), init_blob);
    std::lock_guard lock(mutex_);
    plugins_.push_back(std::move(plugin));
  }

  void start() {
    accept();
    io_thread_ = std::thread([this] { io_.run(); });
  }

  void stop() {
    {
      std::lock_guard lock(mutex_);
      if (stopped_) return;
      stopped_ = true;
    }
    for (auto& p : plugins_) p->stop();
    io_.stop();
    if (io_thread_.joinable()) io_thread_.join();
    std::list<std::shared_ptr<Connection>> conns;
    {
      std::lock_guard lock(mutex_);
      conns.swap(connections_);
    }
    for (auto& c : conns) c->close();
    for (auto& c : conns) c->join();
  }

  void broadcast(const wire::StreamEvent& ev) {
    std::lock_guard lock(mutex_);
    for (auto& c : connections_) c->push(ev);
  }

  std::vector<wire::SubserverDescriptor> descriptors() const {
    std::lock_guard lock(mutex_);
    std::vector<wire::SubserverDescriptor> out;
    for (const auto& p : plugins_) {
      if (p->active()) out.push_back(p->descriptor());
    }
    return out;
  }

 private:
  class Connection {
   public:
    Connection(tcp::socket socket, const DocStore& store, ServerOptions opts, SubserverInfoFn info)
        : socket_(std::move(socket)), session_(store, opts, std::move(info)) {}

    void run() {
      reader_ = std::thread([this] { read_loop(); });
      writer_ = std::thread([this] { write_loop(); });
    }

    void push(const wire::StreamEvent& ev) {
      std::lock_guard lock(mutex_);
      session_.push_stream_event(ev);
      cv_.notify_all();
    }

    void close() {
      std::lock_guard lock(mutex_);
      dead_ = true;
      boost::system::error_code ec;
      socket_.shutdown(tcp::socket::shutdown_both, ec);
      cv_.notify_all();
    }

    void join() {
      if (reader_.joinable()) reader_.join();
      if (writer_.joinable()) writer_.join();
    }

    bool finished() {
      std::lock_guard lock(mutex_);
      return dead_ && writer_done_ && reader_done_;
    }

   private:
    void read_loop() {
      wire::FrameReader frames;
      std::vector<std::uint8_t> buf(64 * 1024);
      for (;;) {
        boost::system::error_code ec;
        const std::size_t n = socket_.read_some(asio::buffer(buf), ec);
        if (ec) break;
        frames.feed({buf.data(), n});
        std::lock_guard lock(mutex_);
        try {
          while (auto msg = frames.next()) session_.receive(*msg);
        } catch (const wire::WireError& e) {
          session_.protocol_violation(e.what());
        }
        cv_.notify_all();
        if (session_.finished() || dead_) break;
      }
      std::lock_guard lock(mutex_);
      dead_ = true;
      reader_done_ = true;
      cv_.notify_all();
    }

    void write_loop() {
      for (;;) {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return session_.has_outgoing() || session_.finished() || dead_; });
        if (!session_.has_outgoing()) break;
        const Bytes frame = wire::encode_frame(*session_.next_outgoing());
        lock.unlock();
        boost::system::error_code ec;
        asio::write(socket_, asio::buffer(frame), ec);
        if (ec) break;
      }
      std::lock_guard lock(mutex_);
      boost::system::error_code ec;
      socket_.shutdown(tcp::socket::shutdown_both, ec);
      dead_ = true;
      writer_done_ = true;
    }

    tcp::socket socket_;
    ServerSession session_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::thread reader_;
    std::thread writer_;
    bool dead_ = false;
    bool reader_done_ = false;
    bool writer_done_ = false;
  };

  void accept() {
    acceptor_.async_accept([this](boost::system::error_code ec, tcp::socket socket) {
      if (ec) return;
      socket.set_option(tcp::no_delay(true), ec);
      auto conn = std::make_shared<Connection>(std::move(socket), *store_, opts_, [this] { return descriptors(); });
      {
        std::lock_guard lock(mutex_);
        reap();
        connections_.push_back(conn);
      }
      conn->run();
      accept();
    });
  }

  // Joins sessions that have ended. Caller holds mutex_.
  void reap() {
    for (auto it = connections_.begin(); it != connections_.end();) {
      if ((*it)->finished()) {
        (*it)->join();
        it = connections_.erase(it);
      } else {
        ++it;
      }
    }
  }

  std::shared_ptr<const DocStore> store_;
  ServerOptions opts_;
  asio::io_context io_;
  tcp::acceptor acceptor_;
  std::thread io_thread_;
  mutable std::mutex mutex_;
  std::list<std::shared_ptr<Connection>> connections_;
  std::vector<std::shared_ptr<Subserver>> plugins_;
  bool stopped_ = false;
};

enum class ClockKind : std::uint8_t { real, simulated };

struct PlayOptions {
  PlayerOptions player;
  ClockKind clock = ClockKind::real;
  double speed = 1.0;  // session ms per wall ms for the simulated clock
  std::chrono::milliseconds connect_timeout{5000};
  std::chrono::milliseconds idle_timeout{30000};  // give up when nothing happens for this long
};

/// Plays one session against a TCP server. The session clock runs at wall
/// speed (real) or scaled by `speed` (simulated); the trace is stamped with
/// it.
inline PlaybackReport play_tcp(const std::string& host, std::uint16_t port, const PlayOptions& opts) {
  using clock = std::chrono::steady_clock;
  asio::io_context io;
  tcp::socket socket(io);
  Player player(opts.player);
  const double speed = opts.clock == ClockKind::simulated && opts.speed > 0 ? opts.speed : 1.0;
  const auto started = clock::now();
  auto session_now = [&] {
    const double wall_ms = std::chrono::duration<double, std::milli>(clock::now() - started).count();
    return static_cast<Millis>(wall_ms * speed);
  };
  auto wall_deadline = [&](Millis session_at) {
    return started + std::chrono::duration_cast<clock::duration>(
                         std::chrono::duration<double, std::milli>(static_cast<double>(session_at) / speed));
  };

  try {
    tcp::resolver resolver(io);
    asio::connect(socket, resolver.resolve(host, std::to_string(port)));
    socket.set_option(tcp::no_delay(true));
  } catch (const boost::system::system_error& e) {
    player.connection_lost(0);
    auto r = player.report();
    r.error = std::string("cannot connect: ") + e.what();
    return r;
  }

  std::mutex mutex;
  std::condition_variable cv;
  std::deque<std::pair<Millis, wire::Message>> inbox;  // stamped on arrival
  bool lost = false;
  std::string read_error;

  std::thread reader([&] {
    wire::FrameReader frames;
    std::vector<std::uint8_t> buf(64 * 1024);
    for (;;) {
      boost::system::error_code ec;
      const std::size_t n = socket.read_some(asio::buffer(buf), ec);
      std::lock_guard lock(mutex);
      if (ec) {
        lost = true;
        cv.notify_all();
        return;
      }
      frames.feed({buf.data(), n});
      try {
        while (auto m = frames.next()) inbox.emplace_back(session_now(), std::move(*m));
      } catch (const wire::WireError& e) {
        read_error = e.what();
        lost = true;
        cv.notify_all();
        return;
      }
      cv.notify_all();
    }
  });

  auto send_all = [&] {
    for (const auto& m : player.take_outgoing()) {
      boost::system::error_code ec;
      asio::write(socket, asio::buffer(wire::encode_frame(m)), ec);
    }
  };

  player.connect(session_now());
  send_all();
  auto last_activity = clock::now();
  while (!player.done()) {
    std::deque<std::pair<Millis, wire::Message>> batch;
    bool connection_gone = false;
    {
      std::unique_lock lock(mutex);
      const auto due = player.next_due();
      const auto deadline = due ? wall_deadline(*due) : clock::now() + opts.idle_timeout;
      cv.wait_until(lock, deadline, [&] { return !inbox.empty() || lost; });
      batch.swap(inbox);
      connection_gone = lost && batch.empty();
    }
    if (!batch.empty()) last_activity = clock::now();
    for (auto& [at, m] : batch) player.receive(m, at);
    const Millis now = std::max(session_now(), batch.empty() ? 0 : batch.back().first);
    player.advance(now);
    send_all();
    if (connection_gone && !player.done()) {
      player.connection_lost(now);
      break;
    }
    if (!player.next_due() && clock::now() - last_activity > opts.idle_timeout) {
      player.connection_lost(now);
      break;
    }
  }
  send_all();
  boost::system::error_code ec;
  socket.shutdown(tcp::socket::shutdown_both, ec);
  reader.join();
  socket.close(ec);
  auto report = player.report();
  if (!read_error.empty() && report.error.empty()) report.error = read_error;
  return report;
}

/// Writes one line to a text-sender's port.
inline void send_text(const std::string& host, std::uint16_t port, std::string_view text) {
  asio::io_context io;
  tcp::socket socket(io);
  tcp::resolver resolver(io);
  asio::connect(socket, resolver.resolve(host, std::to_string(port)));
  std::string line(text);
  line += '\n';
  asio::write(socket, asio::buffer(line));
  boost::system::error_code ec;
  socket.shutdown(tcp::socket::shutdown_send, ec);
  socket.close(ec);
}

}  // namespace mobit

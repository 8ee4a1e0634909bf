#pragma once

#include <boost/asio.hpp>

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mobit/docio.hpp"
#include "mobit/wire.hpp"

namespace mobit {

class PortCountMismatch : public Error {
 public:
  PortCountMismatch(std::size_t want, std::size_t got)
      : Error("expected " + std::to_string(want) + " port(s), got " + std::to_string(got)) {}
};

class InitRejected : public Error {
 public:
  explicit InitRejected(const std::string& reason) : Error("init rejected: " + reason) {}
};

class RegistryError : public Error {
 public:
  using Error::Error;
};

/// What a sub-server receives in set_data: where to emit timestamped
/// payloads and which clock stamps them.
struct DataHandles {
  std::function<void(std::uint16_t port, std::uint64_t at, Bytes payload)> emit;
  std::function<std::uint64_t()> clock;
};

/// A pluggable live data source living next to the server. Lifecycle:
/// get_port_count, set_ports, set_data; it is active after set_data.
class Subserver {
 public:
  virtual ~Subserver() = default;

  virtual std::string name() const = 0;
  virtual std::string target_mime() const = 0;
  virtual std::size_t get_port_count() const = 0;

  void set_ports(std::vector<std::uint16_t> ports) {
    if (ports.size() != get_port_count()) throw PortCountMismatch(get_port_count(), ports.size());
    ports_ = std::move(ports);
  }

  void set_data(DataHandles handles, std::string_view init_blob) {
    if (ports_.size() != get_port_count()) throw PortCountMismatch(get_port_count(), ports_.size());
    if (!handles.emit || !handles.clock) throw InitRejected("missing data handles");
    start(std::move(handles), init_blob);
    active_ = true;
  }

  virtual void stop() {}

  bool active() const { return active_; }
  const std::vector<std::uint16_t>& ports() const { return ports_; }

  wire::SubserverDescriptor descriptor() const { return {name(), ports_, target_mime()}; }

 protected:
  virtual void start(DataHandles handles, std::string_view init_blob) = 0;

  std::vector<std::uint16_t> ports_;

 private:
  std::atomic<bool> active_{false};
};

/// Delivers text messages to running presentations. Lines arrive on its
/// TCP port (one message per line) or through send().
///
/// Init blob (JSON, all keys optional):
///   {"listen": true, "host": "127.0.0.1", "max_line": 4096}
class TextSender : public Subserver {
 public:
  ~TextSender() override { stop(); }

  std::string name() const override { return "text-sender"; }
  std::string target_mime() const override { return "text/x-live"; }
  std::size_t get_port_count() const override { return 1; }

  void send(std::string_view text) {
    std::lock_guard lock(mutex_);
    if (!handles_.emit) throw Error("text-sender is not active");
    const std::string_view line = text.substr(0, max_line_);
    handles_.emit(ports_.front(), handles_.clock(), Bytes(line.begin(), line.end()));
  }

  void stop() override {
    io_.stop();
    if (worker_.joinable()) worker_.join();
  }

  /// Port actually bound by the listener; differs from the assigned port
  /// only when 0 was assigned.
  std::uint16_t listening_port() const { return bound_port_; }

 protected:
  void start(DataHandles handles, std::string_view init_blob) override {
    bool listen = true;
    std::string host = "127.0.0.1";
    std::size_t max_line = 4096;
    if (!detail::is_blank(init_blob)) {
      const auto cfg = nlohmann::json::parse(init_blob, nullptr, false);
      if (cfg.is_discarded() || !cfg.is_object()) throw InitRejected("init blob must be a JSON object");
      for (const auto& [key, value] : cfg.items()) {
        if (key == "listen" && value.is_boolean()) {
          listen = value.get<bool>();
        } else if (key == "host" && value.is_string()) {
          host = value.get<std::string>();
        } else if (key == "max_line" && value.is_number_unsigned() && value.get<std::size_t>() > 0) {
          max_line = value.get<std::size_t>();
        } else {
          throw InitRejected("bad setting '" + key + "'");
        }
      }
    }
    {
      std::lock_guard lock(mutex_);
      handles_ = std::move(handles);
      max_line_ = max_line;
    }
    if (!listen) return;

    namespace ip = boost::asio::ip;
    boost::system::error_code ec;
    const auto address = ip::make_address(host, ec);
    if (ec) throw InitRejected("bad host '" + host + "'");
    acceptor_ = std::make_unique<ip::tcp::acceptor>(io_);
    const ip::tcp::endpoint endpoint(address, ports_.front());
    acceptor_->open(endpoint.protocol(), ec);
    if (!ec) acceptor_->set_option(ip::tcp::acceptor::reuse_address(true), ec);
    if (!ec) acceptor_->bind(endpoint, ec);
    if (!ec) acceptor_->listen(boost::asio::socket_base::max_listen_connections, ec);
    if (ec) throw InitRejected("cannot listen on port " + std::to_string(ports_.front()) + ": " + ec.message());
    bound_port_ = acceptor_->local_endpoint().port();
    accept();
    worker_ = std::thread([this] { io_.run(); });
  }

 private:
  struct Connection {
    explicit Connection(boost::asio::io_context& io) : socket(io) {}
    boost::asio::ip::tcp::socket socket;
    boost::asio::streambuf buffer;
  };

  void accept() {
    auto conn = std::make_shared<Connection>(io_);
    acceptor_->async_accept(conn->socket, [this, conn](boost::system::error_code ec) {
      if (ec) return;
      read_line(conn);
      accept();
    });
  }

  void read_line(std::shared_ptr<Connection> conn) {
    boost::asio::async_read_until(conn->socket, conn->buffer, '\n',
                                  [this, conn](boost::system::error_code ec, std::size_t n) {
                                    std::istream in(&conn->buffer);
                                    std::string line;
                                    if (!ec) {
                                      std::getline(in, line);
                                      if (!line.empty() && line.back() == '\r') line.pop_back();
                                      send(line);
                                      read_line(conn);
                                      return;
                                    }
                                    // Unterminated last line.
                                    if (conn->buffer.size() > 0 && std::getline(in, line)) send(line);
                                    (void)n;
                                  });
  }

  std::mutex mutex_;
  DataHandles handles_;
  std::size_t max_line_ = 4096;
  boost::asio::io_context io_;
  std::unique_ptr<boost::asio::ip::tcp::acceptor> acceptor_;
  std::thread worker_;
  std::uint16_t bound_port_ = 0;
};

/// Named factories for sub-servers.
class SubserverRegistry {
 public:
  using Factory = std::function<std::unique_ptr<Subserver>()>;

  static SubserverRegistry with_builtins() {
    SubserverRegistry r;
    r.add("text-sender", [] { return std::make_unique<TextSender>(); });
    return r;
  }

  void add(std::string name, Factory factory) { factories_[std::move(name)] = std::move(factory); }
  bool contains(const std::string& name) const { return factories_.count(name) > 0; }

  std::unique_ptr<Subserver> create(const std::string& name) const {
    auto it = factories_.find(name);
    if (it == factories_.end()) throw RegistryError("no sub-server named '" + name + "'");
    return it->second();
  }

  std::size_t get_port_count(const std::string& name) const { return create(name)->get_port_count(); }

 private:
  std::map<std::string, Factory> factories_;
};

struct PluginConfig {
  std::string name;
  bool enabled = true;
  std::string init_blob;
  std::vector<std::uint16_t> ports;  // empty: assigned by the server
};

/// Reads the plugin configuration file:
///   {"plugins": [{"name": "text-sender", "enabled": true,
///                 "init": "text-sender.json", "ports": [7001]}]}
/// Init paths are relative to the configuration file.
inline std::vector<PluginConfig> load_plugin_config(const std::filesystem::path& path) {
  const auto cfg = nlohmann::json::parse(read_file(path), nullptr, false);
  if (cfg.is_discarded() || !cfg.is_object() || !cfg.contains("plugins") || !cfg["plugins"].is_array()) {
    throw Error("plugin config " + path.string() + " must hold a \"plugins\" array");
  }
  std::vector<PluginConfig> out;
  for (const auto& p : cfg["plugins"]) {
    if (!p.is_object() || !p.contains("name") || !p["name"].is_string()) throw Error("plugin entry needs a name");
    PluginConfig c;
    try {
      c.name = p["name"].get<std::string>();
      if (p.contains("enabled")) c.enabled = p["enabled"].get<bool>();
      if (p.contains("init")) c.init_blob = read_file(path.parent_path() / p["init"].get<std::string>());
      if (p.contains("ports")) c.ports = p["ports"].get<std::vector<std::uint16_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error("plugin '" + c.name + "': " + e.what());
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace mobit

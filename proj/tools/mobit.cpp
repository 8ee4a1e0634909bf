// mobit: command-line front end for the timeline engine.

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "mobit/mobit.hpp"

namespace {

using namespace mobit;

enum Exit : int { ok = 0, failed = 1, usage = 2, io = 3, protocol = 4 };

struct UsageError : Error {
  using Error::Error;
};

std::shared_ptr<const CompiledDocument> load_compiled(const std::string& file, const LinearizeOptions& opts) {
  Document doc = load_document_file(file);
  const DirectoryStore store(std::filesystem::path(file).parent_path());
  auto compiled = std::make_shared<const CompiledDocument>(compile_document(std::move(doc), opts, store));
  for (const auto& w : compiled->warnings) std::cerr << "warning: " << w << '\n';
  return compiled;
}

std::pair<std::string, std::uint16_t> split_host_port(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0) throw UsageError("expected HOST:PORT, got '" + s + "'");
  const auto port = detail::parse_uint<std::uint16_t>(std::string_view(s).substr(colon + 1), "port");
  return {s.substr(0, colon), port};
}

void print_report(const PlaybackReport& r) {
  std::cout << "outcome " << to_string(r.outcome) << '\n'
            << "final_state " << to_string(r.final_state) << '\n'
            << "startup_ms " << r.startup_ms << '\n'
            << "stall_count " << r.stall_count << '\n'
            << "total_stall_ms " << r.total_stall_ms << '\n'
            << "max_buffer_bytes " << r.max_buffer_bytes << '\n'
            << "budget_violations " << r.budget_violations << '\n';
  if (!r.error.empty()) std::cout << "error " << r.error << '\n';
}

int report_exit(const PlaybackReport& r) {
  switch (r.outcome) {
    case PlaybackOutcome::finished:
    case PlaybackOutcome::stopped: return ok;
    default: return protocol;
  }
}

int cmd_validate(const std::string& file, bool strict) {
  const Document doc = load_document_file(file);
  const auto report = validate(doc, strict ? ContainmentMode::strict : ContainmentMode::clamp);
  bool fatal = false;
  for (const auto& v : report.violations) {
    const bool hard = strict || v.kind == Violation::Kind::cycle || v.kind == Violation::Kind::unknown_ref;
    fatal = fatal || hard;
    std::cout << (hard ? "error: " : "warning: ") << v.describe() << '\n';
  }
  std::cout << (fatal ? "invalid" : "valid") << " mobs=" << report.stats.mobs << " elements=" << report.stats.elements
            << " entries=" << report.stats.entries << " depth=" << report.stats.max_depth << '\n';
  return fatal ? failed : ok;
}

int cmd_compile(const std::string& file, const std::string& out, const LinearizeOptions& opts) {
  const auto compiled = load_compiled(file, opts);
  if (out == "-") {
    std::cout << compiled->script_text;
  } else {
    write_file(out, compiled->script_text);
  }
  return ok;
}

int cmd_oracle(const std::string& file, std::size_t samples, std::uint64_t seed, ContainmentMode mode) {
  const Document doc = load_document_file(file);
  LinearizeOptions opts;
  opts.mode = mode;
  const FlowScript script = linearize(doc, opts);
  std::vector<Millis> times = probe_times(script);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Millis> pick(0, doc.total_duration);
  for (std::size_t i = 0; i < samples; ++i) times.push_back(pick(rng));
  std::size_t disagreements = 0;
  for (const Millis t : times) {
    if (!same_scene(replay(script, t), scene_at(doc, t, mode))) {
      ++disagreements;
      std::cout << "disagree t=" << t << '\n';
    }
  }
  std::cout << (disagreements ? "FAIL" : "ok") << " probes=" << times.size() << " disagreements=" << disagreements
            << '\n';
  return disagreements ? failed : ok;
}

struct SimulateArgs {
  std::string file;
  harness::NetModel net;
  std::uint64_t seed = 0;
  LinearizeOptions compile;
  std::size_t chunk = 64 * 1024;
  std::optional<std::uint64_t> budget;
  std::string trace_out;
  std::vector<std::string> inject;
};

int cmd_simulate(const SimulateArgs& a) {
  if (a.net.bytes_per_s == 0) throw UsageError("--bandwidth must be positive");
  const auto compiled = load_compiled(a.file, a.compile);
  const auto plan = buffer_plan(compiled->script, {a.net.latency_ms, a.net.bytes_per_s});
  for (auto ref : underprovisioned_refs(compiled->script, plan)) {
    std::cerr << "warning: prefetch lead too short for ref " << ref << " (needs " << plan[ref] << " ms)\n";
  }

  harness::SimulationOptions opts;
  opts.net = a.net;
  opts.seed = a.seed;
  opts.server.chunk_size = a.chunk;
  if (a.budget) opts.client.buffer_budget = *a.budget;
  harness::Simulation sim(compiled, opts);
  if (!a.inject.empty()) {
    auto sender = std::make_shared<TextSender>();
    sim.attach(sender, {7001}, R"({"listen": false})");
    for (const auto& spec : a.inject) {
      const auto colon = spec.find(':');
      if (colon == std::string::npos) throw UsageError("--inject expects T:TEXT");
      const Millis at = detail::parse_uint<Millis>(std::string_view(spec).substr(0, colon), "inject time");
      sim.at(at, [sender, text = spec.substr(colon + 1)] { sender->send(text); });
    }
  }
  const auto report = sim.run();
  if (!a.trace_out.empty()) write_file(a.trace_out, format_trace(report.trace));
  print_report(report);
  return report_exit(report);
}

std::atomic<bool> interrupted{false};

int cmd_serve(const std::vector<std::string>& files, const std::string& host, std::optional<std::uint16_t> port,
              std::size_t chunk, const LinearizeOptions& compile, const std::string& plugins) {
  if (!port) {
    const char* env = std::getenv("MOBIT_PORT");
    if (!env) throw UsageError("--port or MOBIT_PORT is required");
    port = detail::parse_uint<std::uint16_t>(env, "MOBIT_PORT");
  }
  auto store = std::make_shared<DocStore>();
  for (const auto& f : files) {
    auto c = load_compiled(f, compile);
    std::cout << "loaded " << c->doc.id << " (" << c->script.header.ref_table.objects.size() << " objects, "
              << c->script.events.size() << " events)\n";
    store->add(std::move(c));
  }

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  TcpServer server(store, {chunk}, *port, host);
  if (!plugins.empty()) {
    const auto registry = SubserverRegistry::with_builtins();
    for (const auto& p : load_plugin_config(plugins)) {
      if (!p.enabled) continue;
      std::shared_ptr<Subserver> plugin = registry.create(p.name);
      auto ports = p.ports;
      if (ports.empty()) ports.assign(plugin->get_port_count(), 0);
      server.attach(plugin, ports, p.init_blob);
      std::cout << "plugin " << p.name << " on port";
      for (auto q : plugin->ports()) std::cout << ' ' << q;
      std::cout << '\n';
    }
  }
  server.start();
  std::cout << "listening on " << host << ':' << server.port() << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  std::cout << "stopped\n";
  return ok;
}

int cmd_play(const std::string& connect, const std::string& clock, double speed, const std::string& trace_out,
             const std::string& doc, std::optional<std::uint64_t> budget) {
  const auto [host, port] = split_host_port(connect);
  PlayOptions opts;
  opts.player.doc_id = doc;
  if (budget) opts.player.buffer_budget = *budget;
  if (clock == "sim") {
    opts.clock = ClockKind::simulated;
    if (!(speed > 0)) throw UsageError("--speed must be positive");
    opts.speed = speed;
  } else if (clock != "real") {
    throw UsageError("--clock must be real or sim");
  }
  const auto report = play_tcp(host, port, opts);
  if (!trace_out.empty()) write_file(trace_out, format_trace(report.trace));
  print_report(report);
  if (report.error.rfind("cannot connect", 0) == 0) return io;
  const auto problems = validate_trace(report.trace);
  for (const auto& p : problems) std::cerr << "trace: " << p << '\n';
  return report_exit(report);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mobit: compound flow timeline engine"};
  app.require_subcommand(1);

  std::string file, out = "-", trace_out, connect, clock = "real", host = "127.0.0.1", doc_id, plugins, text;
  std::vector<std::string> files, inject;
  bool strict = false, clamp = false;
  Millis lead = 0;
  std::size_t chunk = 64 * 1024, samples = 0;
  std::uint64_t seed = 0;
  double speed = 1.0;
  std::optional<std::uint16_t> port;
  std::optional<std::uint64_t> budget;
  SimulateArgs sim;

  auto* validate_cmd = app.add_subcommand("validate", "check acyclicity and containment");
  validate_cmd->add_option("FILE", file)->required();
  validate_cmd->add_flag("--strict", strict, "report every containment overrun");

  auto* compile_cmd = app.add_subcommand("compile", "write the flow script");
  compile_cmd->add_option("FILE", file)->required();
  compile_cmd->add_option("-o,--output", out, "output path, - for stdout")->required();
  auto* strict_flag = compile_cmd->add_flag("--strict", strict);
  compile_cmd->add_flag("--clamp", clamp)->excludes(strict_flag);
  compile_cmd->add_option("--prefetch-lead", lead, "ms");

  auto* serve_cmd = app.add_subcommand("serve", "serve documents over TCP");
  serve_cmd->add_option("FILE", files)->required();
  serve_cmd->add_option("--port", port, "defaults to $MOBIT_PORT");
  serve_cmd->add_option("--host", host);
  serve_cmd->add_option("--chunk", chunk, "bytes per DATA_CHUNK")->check(CLI::PositiveNumber);
  serve_cmd->add_option("--prefetch-lead", lead, "ms");
  serve_cmd->add_option("--plugins", plugins, "plugin configuration file");

  auto* play_cmd = app.add_subcommand("play", "play a served document headlessly");
  play_cmd->add_option("--connect", connect, "HOST:PORT")->required();
  play_cmd->add_option("--clock", clock, "real or sim");
  play_cmd->add_option("--speed", speed, "session ms per wall ms with --clock sim");
  play_cmd->add_option("--trace", trace_out);
  play_cmd->add_option("--doc", doc_id, "document id; empty picks the only one");
  play_cmd->add_option("--budget", budget, "buffer budget in bytes");

  auto* oracle_cmd = app.add_subcommand("oracle", "compare the flow script with direct evaluation");
  oracle_cmd->add_option("FILE", file)->required();
  oracle_cmd->add_option("--samples", samples, "extra random probe times");
  oracle_cmd->add_option("--seed", seed);
  oracle_cmd->add_flag("--strict", strict);

  auto* simulate_cmd = app.add_subcommand("simulate", "play over a shaped link on a virtual clock");
  simulate_cmd->add_option("FILE", sim.file)->required();
  simulate_cmd->add_option("--latency", sim.net.latency_ms, "ms")->required();
  simulate_cmd->add_option("--bandwidth", sim.net.bytes_per_s, "bytes per second")->required();
  simulate_cmd->add_option("--jitter", sim.net.jitter_ms, "ms");
  simulate_cmd->add_option("--seed", sim.seed);
  simulate_cmd->add_option("--prefetch-lead", sim.compile.prefetch_lead_ms, "ms");
  simulate_cmd->add_option("--chunk", sim.chunk)->check(CLI::PositiveNumber);
  simulate_cmd->add_option("--budget", sim.budget, "buffer budget in bytes");
  simulate_cmd->add_option("--trace", sim.trace_out);
  simulate_cmd->add_option("--inject", sim.inject, "T:TEXT, text-sender message at virtual time T");

  auto* send_cmd = app.add_subcommand("send", "send a line to a text-sender");
  send_cmd->add_option("--port", port)->required();
  send_cmd->add_option("--host", host);
  send_cmd->add_option("TEXT", text)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  LinearizeOptions compile;
  compile.mode = strict ? ContainmentMode::strict : ContainmentMode::clamp;
  compile.prefetch_lead_ms = lead;

  try {
    if (*validate_cmd) return cmd_validate(file, strict);
    if (*compile_cmd) return cmd_compile(file, out, compile);
    if (*oracle_cmd) return cmd_oracle(file, samples, seed, compile.mode);
    if (*simulate_cmd) return cmd_simulate(sim);
    if (*serve_cmd) return cmd_serve(files, host, port, chunk, compile, plugins);
    if (*play_cmd) return cmd_play(connect, clock, speed, trace_out, doc_id, budget);
    if (*send_cmd) {
      send_text(host, *port, text);
      return ok;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage: " << e.what() << '\n';
    return usage;
  } catch (const IoError& e) {
    std::cerr << "i/o: " << e.what() << '\n';
    return io;
  } catch (const wire::WireError& e) {
    std::cerr << "protocol: " << e.what() << '\n';
    return protocol;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return failed;
  } catch (const boost::system::system_error& e) {
    std::cerr << "i/o: " << e.what() << '\n';
    return io;
  }
  return usage;
}

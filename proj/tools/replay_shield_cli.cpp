// replay-shield: serve the caching proxy and simulated archive, run page
// workloads, analyze HAR captures and reproduce before/after experiments.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <pthread.h>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "replay_shield/replay_shield.hpp"
#include "replay_shield/reproduce.hpp"

namespace rs = replay_shield;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct GlobalOptions {
  std::string config;
  std::string output;
  bool verbose = false;
};

std::optional<std::string> config_path(const GlobalOptions& g) {
  if (!g.config.empty()) return g.config;
  if (const char* env = std::getenv("REPLAY_SHIELD_CONFIG"); env && *env) return std::string(env);
  return std::nullopt;
}

rs::AppConfig load_config(const GlobalOptions& g) {
  auto path = config_path(g);
  if (!path) return {};
  return rs::load_app_config(*path);
}

bool parse_on_off(const std::string& v) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw rs::ConfigError("expected on|off, got '" + v + "'");
}

// Blocks SIGINT/SIGTERM in every thread and returns a waiter that stops
// `stop_fn` once one arrives.
std::thread install_signal_waiter(std::function<void()> stop_fn) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return std::thread([set, stop_fn = std::move(stop_fn)] {
    int sig = 0;
    sigwait(&set, &sig);
    stop_fn();
  });
}

struct ServeOptions {
  std::string role;
  std::string listen;
  std::string upstream;
  std::string manifest;
  std::string scenario;
  std::string patch;
  std::string injection;
  std::string cache;
};

int cmd_serve(const GlobalOptions& g, const ServeOptions& o) {
  auto cfg = load_config(g);
  std::mutex log_mutex;
  rs::LogSink log = [&](const std::string& line) {
    std::lock_guard lock(log_mutex);
    std::cout << line << std::endl;
  };

  std::unique_ptr<rs::UpstreamSim> upstream;
  std::unique_ptr<rs::ProxyCore> proxy;
  std::unique_ptr<rs::LiveServer> server;
  std::string listen;

  if (o.role == "upstream") {
    rs::MementoStore store;
    if (!o.scenario.empty()) {
      store = rs::resolve_scenario(o.scenario).store();
    } else if (!o.manifest.empty()) {
      store = rs::load_store_from_manifest(o.manifest);
    } else if (cfg.upstream.manifest) {
      store = rs::load_store_from_manifest(*cfg.upstream.manifest);
    } else {
      throw rs::ConfigError("upstream needs --manifest, --scenario or upstream_sim.manifest");
    }
    for (const auto& w : store.warnings) std::cerr << "warning: " << w << '\n';
    rs::PatchConfig patch;
    patch.mode = o.patch.empty() ? cfg.upstream.patch : rs::parse_patch_mode(o.patch);
    upstream = std::make_unique<rs::UpstreamSim>(std::move(store), patch);
    server = std::make_unique<rs::LiveServer>(
        [&](const rs::Request& r, rs::Timestamp now) { return upstream->serve(r, now); }, log);
    listen = o.listen.empty() ? cfg.upstream.listen : o.listen;
  } else {
    auto pc = cfg.proxy;
    if (!o.upstream.empty()) pc.upstream_address = o.upstream;
    if (!o.injection.empty()) pc.injection.mode = rs::parse_injection_mode(o.injection);
    if (!o.cache.empty()) pc.proxy_caching_enabled = parse_on_off(o.cache);
    rs::parse_host_port(pc.upstream_address);
    proxy = std::make_unique<rs::ProxyCore>(
        pc, [address = pc.upstream_address](const rs::Request& r, rs::Timestamp) { return rs::http_fetch(address, r); });
    server = std::make_unique<rs::LiveServer>(
        [&](const rs::Request& r, rs::Timestamp now) { return proxy->handle_request(r, now); }, log);
    listen = o.listen.empty() ? pc.listen_address : o.listen;
  }

  auto hp = rs::parse_host_port(listen);
  auto waiter = install_signal_waiter([&] { server->stop(); });
  try {
    server->bind(hp.host, hp.port);
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    std::_Exit(kExitConfig);
  }
  if (g.verbose) std::cerr << o.role << " listening on " << hp.host << ':' << server->port() << '\n';
  server->run();
  waiter.join();
  return kExitOk;
}

struct WorkloadOptions {
  std::string scenario = "mre";
  std::optional<double> duration;
  std::string transport = "in_process";
  std::string target;
  std::string cache = "off";
  std::string injection = "always";
  int limiter = 0;
};

int cmd_run_workload(const GlobalOptions& g, const WorkloadOptions& o) {
  auto cfg = load_config(g);
  auto scenario = rs::resolve_scenario(o.scenario);
  if (o.duration) scenario.page.duration = *o.duration;
  rs::LimiterRule limiter;
  if (o.limiter > 0) limiter = {true, o.limiter};

  std::vector<rs::ClientEvent> events;
  if (o.transport == "live") {
    auto target = o.target.empty() ? cfg.proxy.listen_address : o.target;
    rs::parse_host_port(target);
    events = rs::run_page(scenario.page, rs::http_transport(target), limiter, rs::RunOptions{5, true});
  } else if (o.transport == "in_process") {
    auto pc = rs::arm_config(cfg.proxy, parse_on_off(o.cache), rs::parse_injection_mode(o.injection));
    events = rs::run_in_process(scenario.page, scenario.store(), pc, {}, limiter).events;
  } else {
    throw rs::ConfigError("unknown transport '" + o.transport + "'");
  }

  if (g.output.empty()) {
    rs::write_events_csv(std::cout, events);
  } else {
    std::filesystem::create_directories(g.output);
    auto path = std::filesystem::path(g.output) / "events.csv";
    rs::write_events_file(path, events);
    if (g.verbose) std::cerr << "wrote " << path.string() << '\n';
  }
  return kExitOk;
}

struct AnalyzeOptions {
  std::string input;
  std::size_t min_repeats = 3;
  bool fuzzy_numeric = false;
  std::size_t threshold_digits = 8;
  std::vector<std::string> strip_params;
};

int cmd_analyze(const GlobalOptions& g, const AnalyzeOptions& o) {
  std::vector<rs::TimedRequest> requests;
  try {
    std::ifstream in(o.input, std::ios::binary);
    if (!in) throw rs::IoError("cannot open " + o.input);
    std::string first_line;
    std::getline(in, first_line);
    if (!first_line.empty() && first_line.back() == '\r') first_line.pop_back();
    in.close();
    if (first_line == rs::kEventCsvHeader) {
      std::ifstream csv(o.input);
      auto events = rs::read_events_csv(csv);
      requests = rs::to_timed(std::span<const rs::ClientEvent>(events));
    } else {
      auto entries = rs::parse_har(o.input);
      requests = rs::to_timed(std::span<const rs::HarEntry>(entries));
    }
  } catch (const rs::ParseError& e) {
    std::cerr << "error: " << o.input << ": " << e.what() << '\n';
    return kExitConfig;
  }

  rs::FuzzyRuleSet rules;
  rules.strip_numeric_only_params = o.fuzzy_numeric;
  rules.threshold_digits = o.threshold_digits;
  rules.strip_params.insert(o.strip_params.begin(), o.strip_params.end());

  auto report = rs::build_report(std::span<const rs::TimedRequest>(requests), o.min_repeats);
  report.recurring = rs::detect_recurring(requests, o.min_repeats, rules);

  std::filesystem::path out_dir = g.output.empty() ? "." : g.output;
  std::filesystem::create_directories(out_dir);
  rs::emit_series_csv(report, out_dir / "series.csv");
  std::cout << rs::describe(report);
  return kExitOk;
}

struct ReproduceCliOptions {
  std::string scenario = "mre";
  bool both = false;
  std::string cache = "on";
  std::string injection = "always";
  std::optional<double> duration;
  std::string transport = "in_process";
  std::string patch = "off";
  int limiter = 0;
};

int cmd_reproduce(const GlobalOptions& g, const ReproduceCliOptions& o) {
  auto cfg = load_config(g);
  rs::ExperimentSpec spec;
  spec.scenario = o.scenario;
  spec.both = o.both;
  spec.cache_enabled = parse_on_off(o.cache);
  spec.injection_mode = rs::parse_injection_mode(o.injection);
  spec.duration = o.duration;
  if (o.transport == "in_process")
    spec.transport = rs::TransportKind::in_process;
  else if (o.transport == "live")
    spec.transport = rs::TransportKind::live;
  else
    throw rs::ConfigError("unknown transport '" + o.transport + "'");
  spec.patch = rs::parse_patch_mode(o.patch);
  if (o.limiter > 0) spec.limiter = {true, o.limiter};
  spec.base = cfg.proxy;
  if (!g.output.empty()) spec.output_dir = g.output;

  auto outcome = rs::reproduce(spec);
  std::cout << outcome.summary;
  if (g.verbose) std::cerr << "outputs in " << spec.output_dir.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Caching proxy, archive simulator and traffic analyzer for archival replay"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "YAML config (falls back to $REPLAY_SHIELD_CONFIG)");
  app.add_option("--output", g.output, "Output directory");
  app.add_flag("--verbose", g.verbose, "Diagnostics on stderr");
  app.fallthrough();

  ServeOptions serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the proxy or the simulated upstream until interrupted");
  serve_cmd->add_option("--role", serve.role, "proxy|upstream")->required()->check(CLI::IsMember({"proxy", "upstream"}));
  serve_cmd->add_option("--listen", serve.listen, "HOST:PORT to listen on");
  serve_cmd->add_option("--upstream", serve.upstream, "proxy: upstream HOST:PORT");
  serve_cmd->add_option("--manifest", serve.manifest, "upstream: manifest file");
  serve_cmd->add_option("--scenario", serve.scenario, "upstream: serve a builtin scenario's manifest");
  serve_cmd->add_option("--patch", serve.patch, "upstream: off|ia|arquivo")->check(CLI::IsMember({"off", "ia", "arquivo"}));
  serve_cmd->add_option("--injection", serve.injection, "proxy: always|missing_only|status_404_only|off");
  serve_cmd->add_option("--cache", serve.cache, "proxy: on|off");

  WorkloadOptions wl;
  auto* wl_cmd = app.add_subcommand("run-workload", "Simulate a page and emit its client event log");
  wl_cmd->add_option("--scenario", wl.scenario, "Builtin scenario or page spec file");
  wl_cmd->add_option("--duration", wl.duration, "Seconds of page time");
  wl_cmd->add_option("--transport", wl.transport, "in_process|live");
  wl_cmd->add_option("--target", wl.target, "live: proxy HOST:PORT");
  wl_cmd->add_option("--cache", wl.cache, "in_process: on|off");
  wl_cmd->add_option("--injection", wl.injection, "in_process: injection mode when cache is on");
  wl_cmd->add_option("--limiter", wl.limiter, "Enable the client limiter with this many repeats");

  AnalyzeOptions an;
  auto* an_cmd = app.add_subcommand("analyze", "Analyze a HAR file or event log");
  an_cmd->add_option("input", an.input, "HAR file or t_seconds,url,source,status CSV")
      ->required()
      ->check(CLI::ExistingFile);
  an_cmd->add_option("--min-repeats", an.min_repeats, "Minimum requests for a recurring cluster");
  an_cmd->add_flag("--fuzzy-numeric", an.fuzzy_numeric, "Ignore long all-digit query parameters");
  an_cmd->add_option("--threshold-digits", an.threshold_digits, "Digits above which a numeric parameter is ignored");
  an_cmd->add_option("--strip-param", an.strip_params, "Query parameter to ignore (repeatable)");

  ReproduceCliOptions rp;
  auto* rp_cmd = app.add_subcommand("reproduce", "Run a scenario through upstream, proxy and workload");
  rp_cmd->add_option("--scenario", rp.scenario, "Builtin scenario or page spec file");
  rp_cmd->add_flag("--both", rp.both, "Cache-off then cache-on, with a comparison");
  rp_cmd->add_option("--cache", rp.cache, "on|off for a single run");
  rp_cmd->add_option("--injection", rp.injection, "Injection mode for the cache-on arm");
  rp_cmd->add_option("--duration", rp.duration, "Seconds of page time");
  rp_cmd->add_option("--transport", rp.transport, "in_process|live");
  rp_cmd->add_option("--patch", rp.patch, "off|ia|arquivo");
  rp_cmd->add_option("--limiter", rp.limiter, "Enable the client limiter with this many repeats");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*serve_cmd) return cmd_serve(g, serve);
    if (*wl_cmd) return cmd_run_workload(g, wl);
    if (*an_cmd) return cmd_analyze(g, an);
    if (*rp_cmd) return cmd_reproduce(g, rp);
  } catch (const rs::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const rs::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

#pragma once

// Before/after experiment driver behind `replay-shield reproduce`.

#include <filesystem>
#include <optional>
#include <sstream>
#include <string>

#include "replay_shield/config.hpp"
#include "replay_shield/experiment.hpp"
#include "replay_shield/live.hpp"

namespace replay_shield {

enum class TransportKind { in_process, live };

struct ExperimentSpec {
  std::string scenario = "mre";  // builtin name or page spec file
  bool cache_enabled = true;
  bool both = false;  // cache-off arm, then cache-on arm
  InjectionMode injection_mode = InjectionMode::always;
  std::optional<double> duration;
  TransportKind transport = TransportKind::in_process;
  std::filesystem::path output_dir = "reproduce_out";
  PatchMode patch = PatchMode::off;
  LimiterRule limiter;
  std::size_t min_repeats = 3;
  ProxyConfig base;  // policy and throttle settings from --config
};

struct ReproduceOutcome {
  std::optional<ExperimentResult> before;
  std::optional<ExperimentResult> after;
  std::optional<ComparisonSummary> comparison;
  std::string summary;
};

/// Resolves a builtin scenario name or a page spec file with a `manifest` key.
inline Scenario resolve_scenario(const std::string& name_or_path) {
  for (const auto& n : builtin_scenario_names())
    if (n == name_or_path) return builtin_scenario(n);
  if (!std::filesystem::exists(name_or_path)) throw ConfigError("unknown scenario '" + name_or_path + "'");
  auto file = load_page_spec(name_or_path);
  if (!file.manifest) throw ConfigError(name_or_path + ": page spec needs a 'manifest' key");
  std::ifstream in(*file.manifest);
  if (!in) throw ConfigError("cannot open manifest " + file.manifest->string());
  std::ostringstream text;
  text << in.rdbuf();
  return {file.page, text.str()};
}

/// Same wiring as run_in_process() but over loopback sockets, paced in real time.
inline ExperimentResult run_live(const PageSpec& page, MementoStore store, const ProxyConfig& proxy_config,
                                 const PatchConfig& patch = {}, const LimiterRule& limiter = {},
                                 std::size_t min_repeats = 3, LogSink upstream_log = {}, LogSink proxy_log = {}) {
  UpstreamSim upstream(std::move(store), patch);
  LiveServer upstream_server([&](const Request& r, Timestamp now) { return upstream.serve(r, now); },
                             std::move(upstream_log));
  int upstream_port = upstream_server.bind("127.0.0.1", 0);
  upstream_server.start();

  auto cfg = proxy_config;
  cfg.upstream_address = "127.0.0.1:" + std::to_string(upstream_port);
  ProxyCore proxy(cfg, [address = cfg.upstream_address](const Request& r, Timestamp) { return http_fetch(address, r); });
  LiveServer proxy_server([&](const Request& r, Timestamp now) { return proxy.handle_request(r, now); },
                          std::move(proxy_log));
  int proxy_port = proxy_server.bind("127.0.0.1", 0);
  proxy_server.start();

  ExperimentResult result;
  result.events = run_page(page, http_transport("127.0.0.1:" + std::to_string(proxy_port)), limiter,
                           RunOptions{5, true});
  proxy_server.stop();
  upstream_server.stop();
  result.client_report = build_report(std::span<const ClientEvent>(result.events), min_repeats);
  result.proxy_metrics = proxy.metrics_snapshot();
  result.upstream_request_count = upstream.requests_served();
  return result;
}

/// Runs one or both arms and writes series_before.csv / series_after.csv,
/// summary.txt, metrics.txt (plus the raw event logs) into spec.output_dir.
inline ReproduceOutcome reproduce(const ExperimentSpec& spec) {
  auto scenario = resolve_scenario(spec.scenario);
  if (spec.duration) scenario.page.duration = *spec.duration;
  try {
    scenario.page.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  PatchConfig patch;
  patch.mode = spec.patch;

  auto run_arm = [&](bool cache_on) {
    auto cfg = arm_config(spec.base, cache_on, spec.injection_mode);
    if (spec.transport == TransportKind::live)
      return run_live(scenario.page, scenario.store(), cfg, patch, spec.limiter, spec.min_repeats);
    return run_in_process(scenario.page, scenario.store(), cfg, patch, spec.limiter, spec.min_repeats);
  };

  ReproduceOutcome out;
  if (spec.both) {
    out.before = run_arm(false);
    out.after = run_arm(true);
    out.comparison = compare_reports(out.before->client_report, out.after->client_report);
  } else if (spec.cache_enabled) {
    out.after = run_arm(true);
  } else {
    out.before = run_arm(false);
  }

  std::filesystem::create_directories(spec.output_dir);
  std::ostringstream summary, metrics;
  summary << "scenario:        " << scenario.page.name << '\n'
          << "duration_s:      " << scenario.page.duration << '\n';
  auto emit = [&](const char* label, ExperimentResult& r) {
    auto series = spec.output_dir / (std::string("series_") + label + ".csv");
    emit_series_csv(r.client_report, series);
    r.series_files.push_back(series);
    write_events_file(spec.output_dir / (std::string("events_") + label + ".csv"), r.events);
    summary << arm_summary(label, r);
    metrics << "[" << label << "]\n" << r.proxy_metrics.to_text();
  };
  if (out.before) emit("before", *out.before);
  if (out.after) emit("after", *out.after);
  if (out.comparison) summary << "[comparison]\n" << out.comparison->to_text();
  out.summary = summary.str();
  write_text_file(spec.output_dir / "summary.txt", out.summary);
  write_text_file(spec.output_dir / "metrics.txt", metrics.str());
  return out;
}

}  // namespace replay_shield

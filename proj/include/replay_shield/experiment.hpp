#pragma once

// Wires upstream_sim -> proxy -> workload in one process on a logical clock.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "replay_shield/analyzer.hpp"
#include "replay_shield/proxy.hpp"
#include "replay_shield/scenarios.hpp"
#include "replay_shield/upstream.hpp"
#include "replay_shield/workload.hpp"

namespace replay_shield {

struct ExperimentResult {
  TrafficReport client_report;
  ProxyMetrics proxy_metrics;
  std::size_t upstream_request_count = 0;
  std::vector<ClientEvent> events;
  std::vector<std::filesystem::path> series_files;
};

/// Proxy settings for one arm of a before/after comparison: `cache_on` turns
/// on both proxy caching and header injection with `injection_mode`.
inline ProxyConfig arm_config(ProxyConfig base, bool cache_on, InjectionMode injection_mode) {
  base.proxy_caching_enabled = cache_on;
  base.injection.mode = cache_on ? injection_mode : InjectionMode::off;
  return base;
}

/// Deterministic run: logical time, no sockets, no threads.
inline ExperimentResult run_in_process(const PageSpec& page, MementoStore store, const ProxyConfig& proxy_config,
                                       const PatchConfig& patch = {}, const LimiterRule& limiter = {},
                                       std::size_t min_repeats = 3) {
  UpstreamSim upstream(std::move(store), patch);
  ProxyCore proxy(proxy_config, [&](const Request& r, Timestamp now) { return upstream.serve(r, now); });
  Transport transport = [&](const std::string& method, const std::string& url, double t) {
    return proxy.handle_request({method, url, {}}, t);
  };
  ExperimentResult result;
  result.events = run_page(page, transport, limiter);
  result.client_report = build_report(std::span<const ClientEvent>(result.events), min_repeats);
  result.proxy_metrics = proxy.metrics_snapshot();
  result.upstream_request_count = upstream.requests_served();
  return result;
}

inline void write_events_file(const std::filesystem::path& path, std::span<const ClientEvent> events) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  write_events_csv(out, events);
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

/// summary.txt body for one arm.
inline std::string arm_summary(const std::string& label, const ExperimentResult& r) {
  std::ostringstream out;
  out << "[" << label << "]\n"
      << describe(r.client_report) << "network_events:  " << count_events(r.events, EventSource::network) << '\n'
      << "memory_cache:    " << count_events(r.events, EventSource::memory_cache) << '\n'
      << "suppressed:      " << count_events(r.events, EventSource::limiter_suppressed) << '\n'
      << "upstream_count:  " << r.upstream_request_count << '\n';
  return out.str();
}

}  // namespace replay_shield

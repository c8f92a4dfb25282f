#pragma once

// Deterministic simulation of a replayed page that keeps requesting resources:
// a browser memory cache, an optional client-side limiter, and four script
// behaviors (carousel, loader retry, onerror fallback, XHR poll) scheduled on
// a 0.1 s logical clock.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "replay_shield/cache_control.hpp"
#include "replay_shield/errors.hpp"
#include "replay_shield/http.hpp"
#include "replay_shield/http_cache.hpp"

namespace replay_shield {

inline constexpr int kTicksPerSecond = 10;

/// Requests urls[0], urls[1], ... cyclically, one per period.
struct CarouselLoop {
  std::vector<std::string> urls;
  double period = 1;
  double start = 0;
};

/// Every cycle re-requests each `#`-templated URL (0..count-1) that has not
/// yet loaded with a 200.
struct LoaderRetry {
  std::string url_template;
  int count = 1;
  double cycle_period = 1;
  double start = 0;

  std::vector<std::string> urls() const {
    std::vector<std::string> out;
    auto hash = url_template.find('#');
    for (int i = 0; i < count; ++i) {
      auto u = url_template;
      if (hash != std::string::npos) u.replace(hash, 1, std::to_string(i));
      out.push_back(std::move(u));
    }
    return out;
  }
};

/// Image with an onerror handler: request `primary`, on failure request the
/// fallback; retried every period until one of them loads. A `#` in the
/// fallback template is replaced by the primary's file name.
struct OnErrorFallback {
  std::string primary;
  std::string fallback_template;
  double retry_period = 1;
  double start = 0;

  std::string fallback_url() const {
    auto path = primary.substr(0, primary.find_first_of("?#"));
    auto name = path.substr(path.rfind('/') + 1);
    auto u = fallback_template;
    if (auto hash = u.find('#'); hash != std::string::npos) u.replace(hash, 1, name);
    return u;
  }
};

/// Unconditional fixed-interval request.
struct XhrPoll {
  std::string url;
  double interval = 1;
  double start = 0;
};

using Behavior = std::variant<CarouselLoop, LoaderRetry, OnErrorFallback, XhrPoll>;

struct PageSpec {
  std::string name;
  std::vector<std::string> essential_resources;
  std::vector<Behavior> behaviors;
  double duration = 60;

  void validate() const {
    if (!(duration > 0)) throw std::invalid_argument("page duration must be > 0");
    auto check_url = [](const std::string& u) {
      if (u.empty() || (u.front() != '/' && u.find("://") == std::string::npos))
        throw std::invalid_argument("malformed page URL: '" + u + "'");
    };
    auto check_period = [](double p) {
      if (!(p > 0)) throw std::invalid_argument("behavior period must be > 0");
    };
    for (const auto& u : essential_resources) check_url(u);
    for (const auto& b : behaviors) {
      std::visit(
          [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if (!(v.start >= 0)) throw std::invalid_argument("behavior start must be >= 0");
            if constexpr (std::is_same_v<T, CarouselLoop>) {
              check_period(v.period);
              if (v.urls.empty()) throw std::invalid_argument("carousel needs at least one URL");
              for (const auto& u : v.urls) check_url(u);
            } else if constexpr (std::is_same_v<T, LoaderRetry>) {
              check_period(v.cycle_period);
              if (v.count < 1) throw std::invalid_argument("loader retry count must be >= 1");
              check_url(v.url_template);
            } else if constexpr (std::is_same_v<T, OnErrorFallback>) {
              check_period(v.retry_period);
              check_url(v.primary);
              check_url(v.fallback_template);
            } else {
              check_period(v.interval);
              check_url(v.url);
            }
          },
          b);
    }
  }
};

enum class EventSource { network, memory_cache, limiter_suppressed };

inline const char* to_string(EventSource s) {
  switch (s) {
    case EventSource::network: return "network";
    case EventSource::memory_cache: return "memory_cache";
    case EventSource::limiter_suppressed: return "limiter_suppressed";
  }
  return "?";
}

inline EventSource parse_event_source(std::string_view s) {
  if (s == "network") return EventSource::network;
  if (s == "memory_cache") return EventSource::memory_cache;
  if (s == "limiter_suppressed") return EventSource::limiter_suppressed;
  throw std::invalid_argument("unknown event source: " + std::string(s));
}

struct ClientEvent {
  double t = 0;
  std::string url;
  EventSource source = EventSource::network;
  int status = 0;  // 0 when the transport failed

  bool operator==(const ClientEvent&) const = default;
};

// ---------------------------------------------------------------------------
// Browser memory cache

struct BrowserCacheDecision {
  bool cache = false;
  std::optional<double> lifetime;  // nullopt: kept for the whole session
};

/// 200 responses stay for the session; anything else only with max-age > 0.
/// no-store always wins.
inline BrowserCacheDecision browser_cache_decide(const std::string& /*url*/, const Response& response) {
  auto d = directives_of(response.headers);
  if (d.no_store) return {};
  if (response.status == 200) return {true, std::nullopt};
  if (d.max_age && *d.max_age > 0) return {true, static_cast<double>(*d.max_age)};
  return {};
}

class BrowserCache {
 public:
  const Response* fresh(const std::string& url, double t) const {
    auto it = entries_.find(url);
    if (it == entries_.end()) return nullptr;
    const auto& e = it->second;
    // Page times are tick multiples built in floating point; an age equal to
    // the lifetime must read as expired, not as 1.9999999999999998 < 2.
    if (e.lifetime && !(t - e.stored_at < *e.lifetime - 1e-9)) return nullptr;
    return &e.response;
  }

  void offer(const std::string& url, const Response& response, double t) {
    auto decision = browser_cache_decide(url, response);
    if (decision.cache)
      entries_[url] = {response, t, decision.lifetime};
    else
      entries_.erase(url);
  }

  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Response response;
    double stored_at = 0;
    std::optional<double> lifetime;
  };
  std::map<std::string, Entry> entries_;
};

// ---------------------------------------------------------------------------
// Client-side limiter

struct LimiterRule {
  bool enabled = false;
  int min_repeats = 3;

  void validate() const {
    if (min_repeats < 2) throw std::invalid_argument("limiter min_repeats must be >= 2");
  }
};

enum class LimiterDecision { pass, suppress };

/// `statuses` are the prior network outcomes for one URL, oldest first.
inline LimiterDecision limiter_filter(std::span<const int> statuses, const LimiterRule& rule) {
  if (!rule.enabled || statuses.size() < static_cast<std::size_t>(rule.min_repeats)) return LimiterDecision::pass;
  int first = statuses.front();
  if (first == 200) return LimiterDecision::pass;
  for (int s : statuses)
    if (s != first) return LimiterDecision::pass;
  return LimiterDecision::suppress;
}

// ---------------------------------------------------------------------------
// Simulation

/// Performs one request. `t` is the logical time in seconds. Throwing marks the
/// request as failed (status 0).
using Transport = std::function<Response(const std::string& method, const std::string& url, double t)>;

struct RunOptions {
  int max_redirects = 5;
  // Sleep until each tick's wall-clock time; used with socket transports.
  bool realtime = false;
};

namespace detail {

class PageRun {
 public:
  PageRun(const Transport& transport, const LimiterRule& limiter, const RunOptions& options)
      : transport_(transport), limiter_(limiter), options_(options) {}

  /// Requests `url` as the page would, following redirects; returns the final status.
  int request(const std::string& url, double t, int depth = 0) {
    auto [status, response] = fetch_one(url, t);
    if (status >= 300 && status < 400 && depth < options_.max_redirects && response) {
      if (auto loc = find_header(response->headers, "Location"); loc && !loc->empty())
        return request(*loc, t, depth + 1);
    }
    return status;
  }

  std::vector<ClientEvent> take_events() { return std::move(events_); }

 private:
  struct History {
    std::vector<int> statuses;
    Response last;
  };

  std::pair<int, std::optional<Response>> fetch_one(const std::string& url, double t) {
    if (const auto* cached = cache_.fresh(url, t)) {
      events_.push_back({t, url, EventSource::memory_cache, cached->status});
      return {cached->status, *cached};
    }
    auto& hist = history_[url];
    if (limiter_filter(hist.statuses, limiter_) == LimiterDecision::suppress) {
      events_.push_back({t, url, EventSource::limiter_suppressed, hist.last.status});
      return {hist.last.status, hist.last};
    }
    Response response;
    try {
      response = transport_("GET", url, t);
    } catch (const std::exception&) {
      events_.push_back({t, url, EventSource::network, 0});
      hist.statuses.push_back(0);
      hist.last = Response{0, {}, {}};
      return {0, std::nullopt};
    }
    events_.push_back({t, url, EventSource::network, response.status});
    hist.statuses.push_back(response.status);
    hist.last = response;
    cache_.offer(url, response, t);
    return {response.status, std::move(response)};
  }

  const Transport& transport_;
  const LimiterRule& limiter_;
  const RunOptions& options_;
  BrowserCache cache_;
  std::map<std::string, History> history_;
  std::vector<ClientEvent> events_;
};

inline long long to_tick(double seconds) {
  return static_cast<long long>(std::ceil(seconds * kTicksPerSecond - 1e-6));
}

// Per-behavior schedule state.
struct Schedule {
  double start = 0;
  double period = 1;
  long long fired = 0;
  bool done = false;

  long long next_tick() const { return to_tick(start + static_cast<double>(fired) * period); }
};

}  // namespace detail

/// Runs `spec` for spec.duration seconds of logical time (ticks 0 .. duration*10 - 1).
/// Essential resources are fetched in order at t = 0; behaviors fire at
/// start + k * period, in declaration order within a tick.
inline std::vector<ClientEvent> run_page(const PageSpec& spec, const Transport& transport,
                                         const LimiterRule& limiter = {}, const RunOptions& options = {}) {
  spec.validate();
  limiter.validate();
  detail::PageRun run(transport, limiter, options);

  struct State {
    detail::Schedule schedule;
    std::vector<std::string> pending;  // LoaderRetry: URLs not yet loaded
  };
  std::vector<State> states;
  for (const auto& b : spec.behaviors) {
    State s;
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          s.schedule.start = v.start;
          if constexpr (std::is_same_v<T, CarouselLoop>) s.schedule.period = v.period;
          if constexpr (std::is_same_v<T, LoaderRetry>) {
            s.schedule.period = v.cycle_period;
            s.pending = v.urls();
          }
          if constexpr (std::is_same_v<T, OnErrorFallback>) s.schedule.period = v.retry_period;
          if constexpr (std::is_same_v<T, XhrPoll>) s.schedule.period = v.interval;
        },
        b);
    states.push_back(std::move(s));
  }

  const auto ticks = std::llround(spec.duration * kTicksPerSecond);
  const auto wall_start = std::chrono::steady_clock::now();
  for (long long tick = 0; tick < ticks; ++tick) {
    const double t = static_cast<double>(tick) / kTicksPerSecond;
    if (options.realtime)
      std::this_thread::sleep_until(wall_start + std::chrono::milliseconds(tick * (1000 / kTicksPerSecond)));
    if (tick == 0)
      for (const auto& url : spec.essential_resources) run.request(url, t);

    for (std::size_t i = 0; i < spec.behaviors.size(); ++i) {
      auto& st = states[i];
      while (!st.schedule.done && st.schedule.next_tick() <= tick) {
        const auto k = st.schedule.fired++;
        std::visit(
            [&](const auto& v) {
              using T = std::decay_t<decltype(v)>;
              if constexpr (std::is_same_v<T, CarouselLoop>) {
                run.request(v.urls[static_cast<std::size_t>(k) % v.urls.size()], t);
              } else if constexpr (std::is_same_v<T, LoaderRetry>) {
                std::vector<std::string> still_failing;
                for (const auto& url : st.pending)
                  if (run.request(url, t) != 200) still_failing.push_back(url);
                st.pending = std::move(still_failing);
                st.schedule.done = st.pending.empty();
              } else if constexpr (std::is_same_v<T, OnErrorFallback>) {
                bool loaded = run.request(v.primary, t) == 200 || run.request(v.fallback_url(), t) == 200;
                st.schedule.done = loaded;
              } else {
                run.request(v.url, t);
              }
            },
            spec.behaviors[i]);
      }
    }
  }
  return run.take_events();
}

// ---------------------------------------------------------------------------
// Event log CSV: t_seconds,url,source,status

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace detail

inline constexpr const char* kEventCsvHeader = "t_seconds,url,source,status";

inline void write_events_csv(std::ostream& out, std::span<const ClientEvent> events) {
  out << kEventCsvHeader << '\n';
  char t[32];
  for (const auto& e : events) {
    std::snprintf(t, sizeof t, "%.1f", e.t);
    out << t << ',' << detail::csv_field(e.url) << ',' << to_string(e.source) << ',' << e.status << '\n';
  }
}

inline std::vector<ClientEvent> read_events_csv(std::istream& in) {
  std::vector<ClientEvent> events;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != kEventCsvHeader) throw ParseError("expected header '" + std::string(kEventCsvHeader) + "'", 1);
      continue;
    }
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 4) throw ParseError("expected 4 fields", lineno);
    try {
      std::size_t used = 0;
      ClientEvent e;
      e.t = std::stod(f[0], &used);
      if (used != f[0].size()) throw std::invalid_argument("t");
      e.url = f[1];
      e.source = parse_event_source(f[2]);
      e.status = std::stoi(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("status");
      events.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw ParseError(std::string("bad event row: ") + ex.what(), lineno);
    }
  }
  if (lineno == 0) throw ParseError("empty event log");
  return events;
}

inline std::size_t count_events(std::span<const ClientEvent> events, EventSource source) {
  std::size_t n = 0;
  for (const auto& e : events) n += e.source == source;
  return n;
}

}  // namespace replay_shield

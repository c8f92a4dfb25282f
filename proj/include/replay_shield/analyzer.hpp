#pragma once

// Request-rate analysis over HAR captures or simulated client event logs:
// per-second and cumulative series, average requests per minute, the initial
// load burst, and clusters of recurring requests.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "replay_shield/errors.hpp"
#include "replay_shield/memento.hpp"
#include "replay_shield/workload.hpp"

namespace replay_shield {

using Millis = std::chrono::sys_time<std::chrono::milliseconds>;

struct HarEntry {
  Millis started_at;
  std::string method;
  std::string url;
  int status = 0;
};

/// ISO-8601 date-time with optional fractional seconds and zone
/// (`Z`, `+HH:MM`, `+HHMM`); no zone means UTC.
inline std::optional<Millis> parse_iso8601(std::string_view s) {
  auto digits = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
    if (pos + len > s.size()) return std::nullopt;
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
      if (!std::isdigit(static_cast<unsigned char>(s[i]))) return std::nullopt;
      v = v * 10 + (s[i] - '0');
    }
    return v;
  };
  auto y = digits(0, 4), mo = digits(5, 2), d = digits(8, 2), h = digits(11, 2), mi = digits(14, 2),
       se = digits(17, 2);
  if (!y || !mo || !d || !h || !mi || !se || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') ||
      s[13] != ':' || s[16] != ':')
    return std::nullopt;
  using namespace std::chrono;
  year_month_day ymd{year{*y}, month{static_cast<unsigned>(*mo)}, day{static_cast<unsigned>(*d)}};
  if (!ymd.ok() || *h > 23 || *mi > 59 || *se > 60) return std::nullopt;

  std::size_t pos = 19;
  long long ms = 0;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    int ndigits = 0;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
      if (ndigits < 3) ms = ms * 10 + (s[pos] - '0');
      ++ndigits;
      ++pos;
    }
    if (ndigits == 0) return std::nullopt;
    for (int i = ndigits; i < 3; ++i) ms *= 10;
  }
  minutes offset{0};
  if (pos < s.size()) {
    if (s[pos] == 'Z') {
      ++pos;
    } else if (s[pos] == '+' || s[pos] == '-') {
      int sign = s[pos] == '-' ? -1 : 1;
      auto oh = digits(pos + 1, 2);
      std::optional<int> om;
      std::size_t end;
      if (pos + 3 < s.size() && s[pos + 3] == ':') {
        om = digits(pos + 4, 2);
        end = pos + 6;
      } else {
        om = digits(pos + 3, 2);
        end = pos + 5;
      }
      if (!oh || !om) return std::nullopt;
      offset = minutes(sign * (*oh * 60 + *om));
      pos = end;
    }
  }
  if (pos != s.size()) return std::nullopt;
  return Millis{sys_days{ymd} + hours{*h} + minutes{*mi} + seconds{*se} + milliseconds{ms} - offset};
}

/// Entries from `log.entries[]`, sorted by start time. Unknown fields are
/// ignored; a missing or out-of-range response.status becomes 0.
inline std::vector<HarEntry> parse_har_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("not JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("log") || !doc["log"].is_object())
    throw ParseError("not a HAR file: missing log object");
  const auto& log = doc["log"];
  if (!log.contains("entries")) return {};
  if (!log["entries"].is_array()) throw ParseError("log.entries is not an array");

  std::vector<HarEntry> out;
  std::size_t index = 0;
  for (const auto& e : log["entries"]) {
    auto where = "entry " + std::to_string(index++);
    if (!e.is_object()) throw ParseError(where + " is not an object");
    auto started = e.find("startedDateTime");
    if (started == e.end() || !started->is_string()) throw ParseError(where + ": missing startedDateTime");
    auto when = parse_iso8601(started->get<std::string>());
    if (!when) throw ParseError(where + ": bad startedDateTime '" + started->get<std::string>() + "'");

    HarEntry h{*when, "GET", {}, 0};
    if (auto req = e.find("request"); req != e.end() && req->is_object()) {
      if (auto m = req->find("method"); m != req->end() && m->is_string()) h.method = m->get<std::string>();
      if (auto u = req->find("url"); u != req->end() && u->is_string()) h.url = u->get<std::string>();
    }
    if (auto res = e.find("response"); res != e.end() && res->is_object()) {
      if (auto st = res->find("status"); st != res->end() && st->is_number_integer()) {
        auto v = st->get<long long>();
        h.status = v >= 0 && v <= 599 ? static_cast<int>(v) : 0;
      }
    }
    out.push_back(std::move(h));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const HarEntry& a, const HarEntry& b) { return a.started_at < b.started_at; });
  return out;
}

inline std::vector<HarEntry> parse_har(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_har_text(ss.str());
}

/// Common analysis input: one request at `t` seconds.
struct TimedRequest {
  double t = 0;
  std::string url;
  int status = 0;
};

/// Rebased so the first entry is at t = 0.
inline std::vector<TimedRequest> to_timed(std::span<const HarEntry> entries) {
  std::vector<TimedRequest> out;
  if (entries.empty()) return out;
  auto origin = entries.front().started_at;
  for (const auto& e : entries)
    out.push_back({std::chrono::duration<double>(e.started_at - origin).count(), e.url, e.status});
  return out;
}

/// Only requests that reached the server (network events) count as traffic.
inline std::vector<TimedRequest> to_timed(std::span<const ClientEvent> events) {
  std::vector<TimedRequest> out;
  for (const auto& e : events)
    if (e.source == EventSource::network) out.push_back({e.t, e.url, e.status});
  return out;
}

struct RecurringCluster {
  CanonicalKey key;
  std::size_t count = 0;
  std::map<int, std::size_t> statuses;  // status -> occurrences
  double first_t = 0;
  double last_t = 0;
};

struct BurstPrefix {
  std::size_t requests = 0;
  long seconds = 0;
};

struct TrafficReport {
  std::size_t total = 0;
  double duration = 1;
  std::vector<std::pair<long, std::size_t>> per_second;  // (second, count), dense from 0
  std::vector<std::pair<long, std::size_t>> cumulative;  // (second, running total)
  double avg_per_minute = 0;
  BurstPrefix burst;
  std::vector<RecurringCluster> recurring;
};

namespace detail {

inline CanonicalKey url_key(const std::string& url, const FuzzyRuleSet& rules) {
  try {
    return fuzzy_reduce(parse_url_lenient(url), rules);
  } catch (const UriError&) {
    return {url};
  }
}

inline long second_of(double t) { return static_cast<long>(std::floor(t + 1e-9)); }

}  // namespace detail

/// Groups by fuzzy_reduce(url, rules); clusters with at least `min_repeats`
/// requests, largest first, ties by earliest first request.
inline std::vector<RecurringCluster> detect_recurring(std::span<const TimedRequest> requests,
                                                      std::size_t min_repeats, const FuzzyRuleSet& rules = {}) {
  std::unordered_map<CanonicalKey, RecurringCluster> by_key;
  for (const auto& r : requests) {
    auto key = detail::url_key(r.url, rules);
    auto [it, inserted] = by_key.try_emplace(key);
    auto& c = it->second;
    if (inserted) {
      c.key = key;
      c.first_t = c.last_t = r.t;
    }
    ++c.count;
    ++c.statuses[r.status];
    c.first_t = std::min(c.first_t, r.t);
    c.last_t = std::max(c.last_t, r.t);
  }
  std::vector<RecurringCluster> out;
  for (auto& [_, c] : by_key)
    if (c.count >= min_repeats) out.push_back(std::move(c));
  std::sort(out.begin(), out.end(), [](const RecurringCluster& a, const RecurringCluster& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.first_t != b.first_t) return a.first_t < b.first_t;
    return a.key < b.key;
  });
  return out;
}

/// The initial load burst: the longest prefix of whole seconds in which every
/// second requests URLs not seen before at more than twice the run's mean rate
/// of such first-seen requests. Recurring traffic repeats known URLs, so the
/// prefix ends where the page stops discovering resources.
inline BurstPrefix detect_burst(std::span<const TimedRequest> requests, double t0, long last_second) {
  if (requests.empty()) return {};
  std::vector<std::size_t> novel(static_cast<std::size_t>(last_second) + 1, 0);
  std::vector<std::size_t> counts(novel.size(), 0);
  std::unordered_set<CanonicalKey> seen;
  for (const auto& r : requests) {
    auto s = static_cast<std::size_t>(detail::second_of(r.t - t0));
    ++counts[s];
    if (seen.insert(detail::url_key(r.url, {})).second) ++novel[s];
  }
  const double threshold = 2.0 * static_cast<double>(seen.size()) / static_cast<double>(novel.size());
  BurstPrefix b;
  for (std::size_t s = 0; s < novel.size() && static_cast<double>(novel[s]) > threshold; ++s) {
    b.requests += counts[s];
    ++b.seconds;
  }
  return b;
}

inline TrafficReport build_report(std::span<const TimedRequest> input, std::size_t min_repeats) {
  std::vector<TimedRequest> requests(input.begin(), input.end());
  std::stable_sort(requests.begin(), requests.end(),
                   [](const TimedRequest& a, const TimedRequest& b) { return a.t < b.t; });
  TrafficReport r;
  r.total = requests.size();
  const double t0 = requests.empty() ? 0 : requests.front().t;
  r.duration = requests.empty() ? 1.0 : std::max(requests.back().t - t0, 1.0);
  const long last_second = detail::second_of(r.duration);

  std::vector<std::size_t> counts(static_cast<std::size_t>(last_second) + 1, 0);
  for (const auto& q : requests) ++counts[static_cast<std::size_t>(detail::second_of(q.t - t0))];
  std::size_t running = 0;
  for (long s = 0; s <= last_second; ++s) {
    running += counts[static_cast<std::size_t>(s)];
    r.per_second.emplace_back(s, counts[static_cast<std::size_t>(s)]);
    r.cumulative.emplace_back(s, running);
  }
  r.avg_per_minute = static_cast<double>(r.total) * 60.0 / r.duration;
  r.burst = detect_burst(requests, t0, last_second);
  r.recurring = detect_recurring(requests, min_repeats);
  return r;
}

inline TrafficReport build_report(std::span<const ClientEvent> events, std::size_t min_repeats) {
  auto timed = to_timed(events);
  return build_report(std::span<const TimedRequest>(timed), min_repeats);
}

inline TrafficReport build_report(std::span<const HarEntry> entries, std::size_t min_repeats) {
  auto timed = to_timed(entries);
  return build_report(std::span<const TimedRequest>(timed), min_repeats);
}

struct ComparisonSummary {
  double before_avg = 0;
  double after_avg = 0;
  double reduction_ratio = 0;
  std::size_t before_total = 0;
  std::size_t after_total = 0;

  /// Aligned `key: value` lines.
  std::string to_text() const {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2);
    out << "before_total:    " << before_total << '\n'
        << "after_total:     " << after_total << '\n'
        << "before_avg:      " << before_avg << '\n'
        << "after_avg:       " << after_avg << '\n'
        << std::setprecision(4) << "reduction_ratio: " << reduction_ratio << '\n';
    return out.str();
  }
};

inline ComparisonSummary compare_reports(const TrafficReport& before, const TrafficReport& after) {
  ComparisonSummary c{before.avg_per_minute, after.avg_per_minute, 0, before.total, after.total};
  if (before.total > 0)
    c.reduction_ratio = 1.0 - static_cast<double>(after.total) / static_cast<double>(before.total);
  return c;
}

inline void write_series_csv(std::ostream& out, const TrafficReport& report) {
  out << "second,count,cumulative\n";
  for (std::size_t i = 0; i < report.per_second.size(); ++i)
    out << report.per_second[i].first << ',' << report.per_second[i].second << ','
        << report.cumulative[i].second << '\n';
}

inline void emit_series_csv(const TrafficReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  write_series_csv(out, report);
  if (!out) throw IoError("write failed for " + path.string());
}

/// Human-readable summary of one report.
/// Requests per minute once the initial burst is excluded from the count.
inline double recurring_per_minute(const TrafficReport& r) {
  return static_cast<double>(r.total - r.burst.requests) * 60.0 / r.duration;
}

inline std::string describe(const TrafficReport& r, std::size_t top = 5) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "total:           " << r.total << '\n'
      << "duration_s:      " << r.duration << '\n'
      << "avg_per_minute:  " << r.avg_per_minute << '\n'
      << "burst_prefix:    " << r.burst.requests << " requests in " << r.burst.seconds << " s\n"
      << "after_burst_pm:  " << recurring_per_minute(r) << '\n'
      << "recurring:       " << r.recurring.size() << " clusters\n";
  for (std::size_t i = 0; i < r.recurring.size() && i < top; ++i) {
    const auto& c = r.recurring[i];
    out << "  " << c.count << "x " << c.key.value << " [";
    bool first = true;
    for (const auto& [status, n] : c.statuses) {
      out << (first ? "" : " ") << status << ':' << n;
      first = false;
    }
    out << "] " << c.first_t << "-" << c.last_t << " s\n";
  }
  return out.str();
}

}  // namespace replay_shield

#pragma once

// Simulated archive replay backend. Serves mementos from an in-memory store,
// answers 404 for missing captures, and can emulate live-web patching
// ("save/_embed" redirects, throttled with 429).

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include "replay_shield/errors.hpp"
#include "replay_shield/http.hpp"
#include "replay_shield/memento.hpp"
#include "replay_shield/throttle.hpp"

namespace replay_shield {

struct MementoRecord {
  UriR target;
  std::string timestamp14;
  int status = 200;
  std::string content_type;
  std::string body;
  std::string memento_datetime;  // RFC 1123 form of timestamp14
};

inline MementoRecord make_record(UriR target, std::string timestamp14, int status,
                                 std::string content_type, std::string body) {
  auto when = parse_timestamp14(timestamp14);
  if (!when) throw std::invalid_argument("invalid timestamp14: " + timestamp14);
  return {std::move(target), std::move(timestamp14), status, std::move(content_type), std::move(body),
          format_http_date(*when)};
}

struct LiveResource {
  int status = 200;
  std::string content_type;
  std::string body;
};

class MementoStore {
 public:
  /// Returns true when an existing (target, timestamp) record was replaced.
  bool add(MementoRecord record) {
    auto& by_ts = records_[canonicalize(record.target)];
    auto ts = record.timestamp14;
    auto [it, inserted] = by_ts.insert_or_assign(std::move(ts), std::move(record));
    return !inserted;
  }

  void add_live(const UriR& target, LiveResource resource) {
    live_web_[canonicalize(target)] = std::move(resource);
  }

  const MementoRecord* exact(const UriR& target, const std::string& timestamp14) const {
    auto it = records_.find(canonicalize(target));
    if (it == records_.end()) return nullptr;
    auto rec = it->second.find(timestamp14);
    return rec == it->second.end() ? nullptr : &rec->second;
  }

  /// Closest capture in time among records that are not themselves 404s;
  /// ties go to the earlier capture.
  const MementoRecord* nearest(const UriR& target, const std::string& timestamp14) const {
    auto it = records_.find(canonicalize(target));
    auto want = parse_timestamp14(timestamp14);
    if (it == records_.end() || !want) return nullptr;
    const MementoRecord* best = nullptr;
    std::chrono::seconds best_gap{};
    for (const auto& [ts, rec] : it->second) {
      if (rec.status == 404) continue;
      auto gap = *parse_timestamp14(ts) - *want;
      if (gap < gap.zero()) gap = -gap;
      if (!best || gap < best_gap) {
        best = &rec;
        best_gap = gap;
      }
    }
    return best;
  }

  const LiveResource* live(const UriR& target) const {
    auto it = live_web_.find(canonicalize(target));
    return it == live_web_.end() ? nullptr : &it->second;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [_, by_ts] : records_) n += by_ts.size();
    return n;
  }

  std::size_t live_size() const { return live_web_.size(); }

  std::vector<const MementoRecord*> all_records() const {
    std::vector<const MementoRecord*> out;
    for (const auto& [_, by_ts] : records_)
      for (const auto& [__, rec] : by_ts) out.push_back(&rec);
    return out;
  }

  std::vector<std::string> warnings;

 private:
  std::map<CanonicalKey, std::map<std::string, MementoRecord>> records_;
  std::map<CanonicalKey, LiveResource> live_web_;
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

inline int parse_status(const std::string& s, std::size_t line) {
  if (s.size() != 3 || !is_digits(s)) throw ParseError("invalid status '" + s + "'", line);
  int v = std::stoi(s);
  if (v < 100 || v > 599) throw ParseError("status out of range '" + s + "'", line);
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string manifest_body(const std::string& field, const std::filesystem::path& base_dir,
                                 std::size_t line) {
  static constexpr std::string_view kInline = "inline:";
  if (field.empty()) return {};
  if (field.rfind(kInline, 0) == 0) return field.substr(kInline.size());
  try {
    return read_file(base_dir / field);
  } catch (const IoError& e) {
    throw ParseError(e.what(), line);
  }
}

}  // namespace detail

/// Manifest: one record per line,
///   timestamp14 <TAB> status <TAB> content_type <TAB> target_url <TAB> body
/// and live-web entries as
///   live: <TAB> status <TAB> content_type <TAB> target_url <TAB> body
/// where body is `inline:<text>` or a file path relative to `base_dir`.
/// Blank lines and lines starting with '#' are skipped.
inline MementoStore parse_manifest(std::istream& in, const std::filesystem::path& base_dir = ".") {
  MementoStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto f = detail::split_tabs(line);
    if (f.size() != 5) throw ParseError("expected 5 tab-separated fields, got " + std::to_string(f.size()), lineno);
    UriR target;
    try {
      target = parse_urir(f[3]);
    } catch (const UriError& e) {
      throw ParseError(e.what(), lineno);
    }
    int status = detail::parse_status(f[1], lineno);
    auto body = detail::manifest_body(f[4], base_dir, lineno);
    if (f[0] == "live:") {
      store.add_live(target, {status, f[2], std::move(body)});
      continue;
    }
    if (!parse_timestamp14(f[0])) throw ParseError("invalid timestamp '" + f[0] + "'", lineno);
    if (store.add(make_record(target, f[0], status, f[2], std::move(body))))
      store.warnings.push_back("line " + std::to_string(lineno) + ": duplicate record for " + f[3] + " at " +
                               f[0] + ", last one wins");
  }
  return store;
}

inline MementoStore load_store_from_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

enum class PatchMode { off, ia, arquivo };

inline PatchMode parse_patch_mode(std::string_view s) {
  if (s == "off") return PatchMode::off;
  if (s == "ia") return PatchMode::ia;
  if (s == "arquivo") return PatchMode::arquivo;
  throw std::invalid_argument("unknown patch mode: " + std::string(s));
}

struct PatchConfig {
  // `ia` redirects misses to the save endpoint; `off` and `arquivo` answer a plain 404.
  PatchMode mode = PatchMode::off;
  std::string patch_path_prefix = "/save/_embed/";
  ThrottleConfig throttle{true, 30, 1, {"/save/_embed/"}};

  bool enabled() const { return mode == PatchMode::ia; }

  void validate() const {
    if (patch_path_prefix.size() < 2 || patch_path_prefix.front() != '/' || patch_path_prefix.back() != '/')
      throw std::invalid_argument("patch prefix must begin and end with '/'");
    throttle.validate();
  }
};

struct UpstreamOptions {
  // Wall-clock instant corresponding to logical time 0; patches are archived
  // at clock_origin + now.
  SysSeconds clock_origin = std::chrono::sys_days{std::chrono::year{2022} / 9 / 1};
};

class UpstreamSim {
 public:
  UpstreamSim(MementoStore store, PatchConfig patch = {}, UpstreamOptions options = {})
      : store_(std::move(store)),
        patch_((patch.validate(), std::move(patch))),
        options_(options),
        throttle_(patch_throttle(patch_)) {}

  Response serve(const Request& request, Timestamp now) {
    ++served_;
    const auto& target = request.target;
    if (patch_.enabled() && target.rfind(patch_.patch_path_prefix, 0) == 0)
      return patch(target.substr(patch_.patch_path_prefix.size()), now);

    UriM m;
    try {
      m = parse_urim(target);
    } catch (const UriError&) {
      return not_found();
    }

    std::shared_lock lock(mutex_);
    if (auto rec = store_.exact(m.target, m.timestamp14); rec && rec->status != 404) {
      Response r{rec->status, {{"Content-Type", rec->content_type}, {"Memento-Datetime", rec->memento_datetime}},
                 rec->body};
      return r;
    }
    if (auto rec = store_.nearest(m.target, m.timestamp14)) {
      UriM redirect{m.archive_prefix, rec->timestamp14, m.modifier, rec->target};
      return {302, {{"Location", format_urim(redirect)}, {"Content-Type", "text/html"}}, {}};
    }
    lock.unlock();
    if (patch_.enabled())
      return {302, {{"Location", patch_.patch_path_prefix + format_urir(m.target)}, {"Content-Type", "text/html"}}, {}};
    return not_found();
  }

  /// Tries to archive `target_url` from the simulated live web.
  Response patch(const std::string& target_url, Timestamp now) {
    UriR target;
    try {
      target = parse_urir(target_url);
    } catch (const UriError&) {
      return not_found();
    }
    auto key = canonicalize(target).value;
    if (auto verdict = throttle_.check(key, patch_.patch_path_prefix, now); !verdict)
      return too_many_requests(verdict.retry_after);

    std::unique_lock lock(mutex_);
    auto live = store_.live(target);
    if (!live || live->status != 200) return not_found();
    auto when = options_.clock_origin + std::chrono::seconds(static_cast<long long>(now));
    auto rec = make_record(target, format_timestamp14(when), 200, live->content_type, live->body);
    Response r{200, {{"Content-Type", rec.content_type}, {"Memento-Datetime", rec.memento_datetime}}, rec.body};
    store_.add(std::move(rec));
    return r;
  }

  std::size_t requests_served() const { return served_.load(); }

  std::size_t record_count() const {
    std::shared_lock lock(mutex_);
    return store_.size();
  }

  const PatchConfig& patch_config() const { return patch_; }
  const UpstreamOptions& options() const { return options_; }

 private:
  static ThrottleConfig patch_throttle(const PatchConfig& p) {
    auto cfg = p.throttle;
    cfg.matched_path_prefixes = {p.patch_path_prefix};
    return cfg;
  }

  static Response not_found() {
    return {404, {{"Content-Type", "text/html"}}, "<html><body><h1>404 Not Found</h1></body></html>\n"};
  }

  mutable std::shared_mutex mutex_;
  MementoStore store_;
  PatchConfig patch_;
  UpstreamOptions options_;
  SlidingWindowThrottle throttle_;
  std::atomic<std::size_t> served_{0};
};

}  // namespace replay_shield

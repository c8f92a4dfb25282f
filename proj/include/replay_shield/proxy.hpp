#pragma once

// Reverse proxy pipeline: throttle, cache lookup, upstream fetch,
// Cache-Control injection, store. Transport-agnostic; the live server and the
// in-process experiment runner both drive handle_request().

#include <cstdint>
#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "replay_shield/cache_control.hpp"
#include "replay_shield/http.hpp"
#include "replay_shield/http_cache.hpp"
#include "replay_shield/memento.hpp"
#include "replay_shield/throttle.hpp"

namespace replay_shield {

enum class InjectionMode { always, missing_only, status_404_only, off };

inline InjectionMode parse_injection_mode(std::string_view s) {
  if (s == "always") return InjectionMode::always;
  if (s == "missing_only") return InjectionMode::missing_only;
  if (s == "status_404_only") return InjectionMode::status_404_only;
  if (s == "off") return InjectionMode::off;
  throw std::invalid_argument("unknown injection mode: " + std::string(s));
}

inline const char* to_string(InjectionMode m) {
  switch (m) {
    case InjectionMode::always: return "always";
    case InjectionMode::missing_only: return "missing_only";
    case InjectionMode::status_404_only: return "status_404_only";
    case InjectionMode::off: return "off";
  }
  return "?";
}

inline KeyMode parse_key_mode(std::string_view s) {
  if (s == "exact") return KeyMode::exact;
  if (s == "canonical") return KeyMode::canonical;
  if (s == "fuzzy") return KeyMode::fuzzy;
  throw std::invalid_argument("unknown key mode: " + std::string(s));
}

struct InjectionConfig {
  std::string header_value = "public, max-age=600";
  InjectionMode mode = InjectionMode::always;
};

inline Response inject_cache_control(Response response, const InjectionConfig& injection) {
  switch (injection.mode) {
    case InjectionMode::off:
      break;
    case InjectionMode::always:
      set_header(response.headers, "Cache-Control", injection.header_value);
      break;
    case InjectionMode::missing_only:
      if (!has_header(response.headers, "Cache-Control"))
        response.headers.emplace_back("Cache-Control", injection.header_value);
      break;
    case InjectionMode::status_404_only:
      if (response.status == 404) set_header(response.headers, "Cache-Control", injection.header_value);
      break;
  }
  return response;
}

struct ProxyConfig {
  std::string listen_address = "127.0.0.1:8080";
  std::string upstream_address = "127.0.0.1:8081";
  CachePolicy policy;
  InjectionConfig injection;
  ThrottleConfig throttle{false, 30, 1, {"/save/_embed/"}};
  bool proxy_caching_enabled = true;
  // Collapse concurrent misses for one key into a single upstream fetch.
  bool coalesce_requests = false;

  void validate() const {
    policy.validate();
    throttle.validate();
    bool saw_public = false, saw_private = false;
    std::string lowered = to_lower(injection.header_value);
    std::istringstream in(lowered);
    for (std::string item; std::getline(in, item, ',');) {
      auto name = trim(std::string_view(item).substr(0, item.find('=')));
      saw_public |= name == "public";
      saw_private |= name == "private";
    }
    if (saw_public && saw_private)
      throw std::invalid_argument("injected Cache-Control is both public and private");
  }
};

struct ProxyMetrics {
  std::uint64_t client_requests = 0;
  std::uint64_t cache_hits_fresh = 0;
  std::uint64_t upstream_requests = 0;
  std::uint64_t throttled_429 = 0;
  std::uint64_t bad_requests = 0;  // rejected before the pipeline, not client_requests
  std::map<int, std::uint64_t> responses_by_status;

  bool conserved() const {
    return client_requests == cache_hits_fresh + upstream_requests + throttled_429;
  }

  /// `name value` lines, as served by /__metrics.
  std::string to_text() const {
    std::ostringstream out;
    out << "client_requests " << client_requests << '\n'
        << "cache_hits_fresh " << cache_hits_fresh << '\n'
        << "upstream_requests " << upstream_requests << '\n'
        << "throttled_429 " << throttled_429 << '\n'
        << "bad_requests " << bad_requests << '\n';
    for (const auto& [status, n] : responses_by_status) out << "responses_status_" << status << ' ' << n << '\n';
    return out.str();
  }
};

class UpstreamUnreachable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string_view target_path(std::string_view target) {
  return target.substr(0, target.find_first_of("?#"));
}

inline bool is_valid_origin_target(std::string_view target) {
  if (target.empty() || target.front() != '/') return false;
  for (unsigned char c : target)
    if (c <= 0x20 || c == 0x7f) return false;
  return true;
}

class ProxyCore {
 public:
  /// Throws UpstreamUnreachable when the backend cannot be reached.
  using Upstream = std::function<Response(const Request&, Timestamp)>;

  ProxyCore(ProxyConfig config, Upstream upstream)
      : config_((config.validate(), std::move(config))),
        cache_(config_.policy),
        throttle_(config_.throttle),
        upstream_(std::move(upstream)) {}

  const ProxyConfig& config() const { return config_; }
  HttpCache& cache() { return cache_; }

  CacheKey cache_key_for(const Request& request) const {
    CacheKey key{request.method, request.target};
    if (config_.policy.key_mode == KeyMode::exact) return key;
    auto reduce = [&](const UriR& u) {
      return config_.policy.key_mode == KeyMode::fuzzy ? fuzzy_reduce(u, config_.policy.fuzzy_rules)
                                                       : canonicalize(u);
    };
    try {
      auto m = parse_urim(request.target);
      key.key = m.archive_prefix + "/" + m.timestamp14 + m.modifier.text() + "/" + reduce(m.target).value;
    } catch (const UriError&) {
      try {
        key.key = reduce(parse_url_lenient(request.target)).value;
      } catch (const UriError&) {
      }
    }
    return key;
  }

  Response handle_request(const Request& request, Timestamp now) {
    if (request.method == "GET" && request.target == "/__metrics")
      return {200, {{"Content-Type", "text/plain"}}, metrics_snapshot().to_text()};

    if (!is_method_token(request.method) || !is_valid_origin_target(request.target)) {
      std::lock_guard lock(metrics_mutex_);
      ++metrics_.bad_requests;
      return {400, {{"Content-Type", "text/plain"}, {"X-Cache", "MISS"}}, "bad request\n"};
    }

    auto key = cache_key_for(request);
    if (auto verdict = throttle_.check(key.flat(), target_path(request.target), now); !verdict) {
      auto r = too_many_requests(verdict.retry_after);
      r.headers.emplace_back("X-Cache", "MISS");
      record(Outcome::throttled, r.status);
      return r;
    }

    const bool cacheable = config_.proxy_caching_enabled && request.method == "GET";
    if (cacheable) {
      auto hit = cache_.lookup(key, now);
      if (hit.state == Freshness::fresh) return hit_response(hit.entry->to_response());
    }

    if (cacheable && config_.coalesce_requests) {
      std::promise<Response> promise;
      std::shared_future<Response> pending;
      bool leader = false;
      {
        std::lock_guard lock(inflight_mutex_);
        auto [it, inserted] = inflight_.try_emplace(key.flat());
        if (inserted) {
          it->second = promise.get_future().share();
          leader = true;
        }
        pending = it->second;
      }
      if (!leader) return hit_response(pending.get());
      // A previous leader may have stored the entry between our lookup and now.
      if (auto hit = cache_.lookup(key, now); hit.state == Freshness::fresh) {
        auto r = hit.entry->to_response();
        promise.set_value(r);
        std::lock_guard lock(inflight_mutex_);
        inflight_.erase(key.flat());
        return hit_response(std::move(r));
      }
      auto r = fetch_and_store(request, key, now);
      promise.set_value(r);
      {
        std::lock_guard lock(inflight_mutex_);
        inflight_.erase(key.flat());
      }
      return miss_response(std::move(r));
    }

    return miss_response(fetch_and_store(request, key, now));
  }

  ProxyMetrics metrics_snapshot() const {
    std::lock_guard lock(metrics_mutex_);
    return metrics_;
  }

 private:
  enum class Outcome { hit, upstream, throttled };

  void record(Outcome outcome, int status) {
    std::lock_guard lock(metrics_mutex_);
    ++metrics_.client_requests;
    switch (outcome) {
      case Outcome::hit: ++metrics_.cache_hits_fresh; break;
      case Outcome::upstream: ++metrics_.upstream_requests; break;
      case Outcome::throttled: ++metrics_.throttled_429; break;
    }
    ++metrics_.responses_by_status[status];
  }

  Response hit_response(Response r) {
    set_header(r.headers, "X-Cache", "HIT");
    record(Outcome::hit, r.status);
    return r;
  }

  Response miss_response(Response r) {
    set_header(r.headers, "X-Cache", "MISS");
    record(Outcome::upstream, r.status);
    return r;
  }

  Response fetch_and_store(const Request& request, const CacheKey& key, Timestamp now) {
    Response r;
    try {
      r = upstream_(request, now);
    } catch (const UpstreamUnreachable& e) {
      return {502, {{"Content-Type", "text/plain"}}, std::string("upstream unreachable: ") + e.what() + "\n"};
    }
    remove_header(r.headers, "X-Cache");
    r = inject_cache_control(std::move(r), config_.injection);
    if (config_.proxy_caching_enabled && request.method == "GET")
      cache_.store(key, r, directives_of(r.headers), now);
    return r;
  }

  ProxyConfig config_;
  HttpCache cache_;
  SlidingWindowThrottle throttle_;
  Upstream upstream_;

  mutable std::mutex metrics_mutex_;
  ProxyMetrics metrics_;

  std::mutex inflight_mutex_;
  std::unordered_map<std::string, std::shared_future<Response>> inflight_;
};

}  // namespace replay_shield

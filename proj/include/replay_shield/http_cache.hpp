#pragma once

// Shared response cache with Cache-Control freshness and negative caching.

#include <cstddef>
#include <list>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "replay_shield/cache_control.hpp"
#include "replay_shield/http.hpp"
#include "replay_shield/memento.hpp"

namespace replay_shield {

/// Monotonic time in seconds. The cache never reads a clock itself.
using Timestamp = double;

enum class KeyMode { exact, canonical, fuzzy };

struct CachePolicy {
  std::set<int> cacheable_statuses{200, 404};
  double default_max_age = 600;
  KeyMode key_mode = KeyMode::exact;
  std::size_t capacity = 10000;
  bool respect_upstream_directives = true;
  // Used only when key_mode == fuzzy.
  FuzzyRuleSet fuzzy_rules{{}, true, 8};

  void validate() const {
    if (capacity < 1) throw std::invalid_argument("cache capacity must be >= 1");
    if (default_max_age < 0) throw std::invalid_argument("default max-age must be >= 0");
  }
};

struct CachedResponse {
  int status = 0;
  Headers headers;
  std::string body;
  Timestamp stored_at = 0;
  double freshness_lifetime = 0;

  double age(Timestamp now) const { return now - stored_at; }
  // Strict: an entry stored at t with lifetime L is fresh on [t, t+L).
  bool is_fresh(Timestamp now) const { return age(now) < freshness_lifetime; }

  Response to_response() const { return {status, headers, body}; }
};

struct CacheKey {
  std::string method = "GET";
  std::string key;

  bool operator==(const CacheKey&) const = default;
  std::string flat() const { return method + ' ' + key; }
};

enum class Freshness { fresh, stale, miss };

struct LookupResult {
  Freshness state = Freshness::miss;
  std::optional<CachedResponse> entry;
};

enum class RejectReason { NoStore, Private, NotGet, UncacheableStatus };

inline const char* to_string(RejectReason r) {
  switch (r) {
    case RejectReason::NoStore: return "no-store";
    case RejectReason::Private: return "private";
    case RejectReason::NotGet: return "method is not GET";
    case RejectReason::UncacheableStatus: return "status not cacheable";
  }
  return "?";
}

struct StoreResult {
  std::optional<RejectReason> rejected;

  bool stored() const { return !rejected; }
  explicit operator bool() const { return stored(); }
};

/// LRU-bounded shared cache. Every public operation holds one mutex for its
/// whole duration, so concurrent callers see each entry either before or after
/// a store, never half-written.
class HttpCache {
 public:
  explicit HttpCache(CachePolicy policy = {}) : policy_(std::move(policy)) { policy_.validate(); }

  const CachePolicy& policy() const { return policy_; }

  LookupResult lookup(const CacheKey& key, Timestamp now) {
    std::lock_guard lock(mutex_);
    auto it = index_.find(key.flat());
    if (it == index_.end()) return {};
    lru_.splice(lru_.begin(), lru_, it->second);
    const auto& entry = it->second->response;
    return {entry.is_fresh(now) ? Freshness::fresh : Freshness::stale, entry};
  }

  StoreResult store(const CacheKey& key, const Response& response,
                    const CacheControlDirectives& directives, Timestamp now) {
    if (key.method != "GET") return {RejectReason::NotGet};
    if (directives.no_store) return {RejectReason::NoStore};
    if (directives.is_private) return {RejectReason::Private};
    if (!policy_.cacheable_statuses.count(response.status)) return {RejectReason::UncacheableStatus};

    double lifetime = policy_.default_max_age;
    if (policy_.respect_upstream_directives) {
      if (directives.max_age)
        lifetime = static_cast<double>(*directives.max_age);
      else if (directives.no_cache)
        lifetime = 0;
    }

    CachedResponse entry{response.status, response.headers, response.body, now, lifetime};
    auto flat = key.flat();
    std::lock_guard lock(mutex_);
    if (auto it = index_.find(flat); it != index_.end()) {
      it->second->response = std::move(entry);
      lru_.splice(lru_.begin(), lru_, it->second);
      return {};
    }
    while (lru_.size() >= policy_.capacity) {
      index_.erase(lru_.back().flat_key);
      lru_.pop_back();
    }
    lru_.push_front({flat, std::move(entry)});
    index_.emplace(std::move(flat), lru_.begin());
    return {};
  }

  bool purge(const CacheKey& key) {
    std::lock_guard lock(mutex_);
    auto it = index_.find(key.flat());
    if (it == index_.end()) return false;
    lru_.erase(it->second);
    index_.erase(it);
    return true;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return lru_.size();
  }

  bool contains(const CacheKey& key) const {
    std::lock_guard lock(mutex_);
    return index_.count(key.flat()) != 0;
  }

 private:
  struct Slot {
    std::string flat_key;
    CachedResponse response;
  };

  CachePolicy policy_;
  mutable std::mutex mutex_;
  std::list<Slot> lru_;  // most recently used first
  std::unordered_map<std::string, std::list<Slot>::iterator> index_;
};

}  // namespace replay_shield

#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "replay_shield/http_cache.hpp"

namespace replay_shield {

struct ThrottleConfig {
  bool enabled = false;
  double window_seconds = 30;
  std::size_t max_requests_per_key = 1;
  std::vector<std::string> matched_path_prefixes{"/save/_embed/"};

  void validate() const {
    if (!(window_seconds > 0)) throw std::invalid_argument("throttle window must be > 0");
    if (max_requests_per_key < 1) throw std::invalid_argument("throttle max requests must be >= 1");
  }

  bool applies_to(std::string_view path) const {
    for (const auto& p : matched_path_prefixes)
      if (path.substr(0, p.size()) == p) return true;
    return false;
  }
};

struct ThrottleVerdict {
  bool allowed = true;
  double retry_after = 0;  // seconds until the oldest counted request leaves the window

  explicit operator bool() const { return allowed; }
};

/// Per-key sliding window. Only allowed requests are counted; a request at
/// time t counts against the key while now - t < window_seconds.
class SlidingWindowThrottle {
 public:
  explicit SlidingWindowThrottle(ThrottleConfig cfg = {}) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const ThrottleConfig& config() const { return cfg_; }

  ThrottleVerdict check(const std::string& key, std::string_view path, Timestamp now) {
    if (!cfg_.enabled || !cfg_.applies_to(path)) return {};
    std::lock_guard lock(mutex_);
    auto& hits = windows_[key];
    while (!hits.empty() && now - hits.front() >= cfg_.window_seconds) hits.pop_front();
    if (hits.size() >= cfg_.max_requests_per_key)
      return {false, cfg_.window_seconds - (now - hits.front())};
    hits.push_back(now);
    return {};
  }

 private:
  ThrottleConfig cfg_;
  std::mutex mutex_;
  std::unordered_map<std::string, std::deque<Timestamp>> windows_;
};

inline Response too_many_requests(double retry_after) {
  Response r{429, {{"Content-Type", "text/plain"}}, {}};
  auto secs = static_cast<long long>(std::ceil(std::max(retry_after, 0.0)));
  r.headers.emplace_back("Retry-After", std::to_string(secs));
  return r;
}

}  // namespace replay_shield

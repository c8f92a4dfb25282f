#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "replay_shield/http.hpp"

namespace replay_shield {

struct CacheControlDirectives {
  bool is_public = false;
  bool is_private = false;
  bool no_store = false;
  bool no_cache = false;
  std::optional<std::int64_t> max_age;

  bool operator==(const CacheControlDirectives&) const = default;
};

// Delta-seconds larger than this are clamped (RFC 9111 suggests 2^31).
inline constexpr std::int64_t kMaxDeltaSeconds = 2147483648LL;

/// Lenient parse: names are case-insensitive, unknown directives are ignored
/// and an unparsable max-age is treated as absent. `private` wins over `public`.
inline CacheControlDirectives parse_cache_control(std::string_view value) {
  CacheControlDirectives d;
  std::size_t start = 0;
  while (start <= value.size()) {
    auto comma = value.find(',', start);
    auto item = trim(value.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                         : comma - start));
    start = comma == std::string_view::npos ? value.size() + 1 : comma + 1;
    if (item.empty()) continue;

    auto eq = item.find('=');
    auto name = to_lower(trim(item.substr(0, eq)));
    std::string_view arg = eq == std::string_view::npos ? std::string_view{} : trim(item.substr(eq + 1));
    if (arg.size() >= 2 && arg.front() == '"' && arg.back() == '"') arg = arg.substr(1, arg.size() - 2);

    if (name == "public") {
      d.is_public = true;
    } else if (name == "private") {
      d.is_private = true;
    } else if (name == "no-store") {
      d.no_store = true;
    } else if (name == "no-cache") {
      d.no_cache = true;
    } else if (name == "max-age") {
      if (arg.empty() || arg.find_first_not_of("0123456789") != std::string_view::npos) continue;
      std::int64_t v = 0;
      for (char c : arg) {
        v = v * 10 + (c - '0');
        if (v > kMaxDeltaSeconds) {
          v = kMaxDeltaSeconds;
          break;
        }
      }
      d.max_age = v;
    }
  }
  if (d.is_private) d.is_public = false;
  return d;
}

inline CacheControlDirectives directives_of(const Headers& headers) {
  auto v = find_header(headers, "Cache-Control");
  return parse_cache_control(v ? *v : std::string{});
}

}  // namespace replay_shield

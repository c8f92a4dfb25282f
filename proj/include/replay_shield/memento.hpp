#pragma once

// Archival replay URLs: original resources (URI-R), mementos (URI-M), and the
// canonical keys used to collapse equivalent requests.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "replay_shield/http.hpp"

namespace replay_shield {

enum class UriErrorCode { NoTimestampSegment, InvalidTimestamp, MalformedTarget };

class UriError : public std::runtime_error {
 public:
  UriError(UriErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  UriErrorCode code() const noexcept { return code_; }

 private:
  UriErrorCode code_;
};

struct QueryParam {
  std::string name;
  std::optional<std::string> value;  // nullopt for a bare `name` without '='

  bool operator==(const QueryParam&) const = default;
};

struct UriR {
  std::string scheme;
  std::string host;
  std::optional<std::uint16_t> port;
  std::string path;  // raw bytes, percent-encoding untouched
  std::vector<QueryParam> query;
  std::optional<std::string> fragment;

  bool operator==(const UriR&) const = default;
};

namespace detail {

inline bool is_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

inline bool is_host_char(unsigned char c) {
  return std::isalnum(c) || c == '-' || c == '.' || c == '_';
}

inline std::vector<QueryParam> split_query(std::string_view q) {
  std::vector<QueryParam> out;
  std::size_t start = 0;
  while (true) {
    auto amp = q.find('&', start);
    auto part = q.substr(start, amp == std::string_view::npos ? std::string_view::npos : amp - start);
    auto eq = part.find('=');
    if (eq == std::string_view::npos)
      out.push_back({std::string(part), std::nullopt});
    else
      out.push_back({std::string(part.substr(0, eq)), std::string(part.substr(eq + 1))});
    if (amp == std::string_view::npos) break;
    start = amp + 1;
  }
  return out;
}

inline std::string join_query(const std::vector<QueryParam>& params) {
  std::string out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (i) out += '&';
    out += params[i].name;
    if (params[i].value) {
      out += '=';
      out += *params[i].value;
    }
  }
  return out;
}

}  // namespace detail

/// Parses an absolute http(s) URL. Scheme and host are lowercased; everything
/// else is kept byte-for-byte so that format_urir(parse_urir(s)) == s whenever
/// s already has a lowercase scheme and host.
inline UriR parse_urir(std::string_view s) {
  auto fail = [&](const char* why) {
    return UriError(UriErrorCode::MalformedTarget, std::string(why) + ": " + std::string(s));
  };
  auto sep = s.find("://");
  if (sep == std::string_view::npos || sep == 0) throw fail("missing scheme");
  UriR u;
  u.scheme = to_lower(s.substr(0, sep));
  if (u.scheme != "http" && u.scheme != "https") throw fail("unsupported scheme");

  auto rest = s.substr(sep + 3);
  auto auth_end = rest.find_first_of("/?#");
  auto authority = rest.substr(0, auth_end);
  rest = auth_end == std::string_view::npos ? std::string_view{} : rest.substr(auth_end);

  std::string_view host = authority;
  std::optional<std::string_view> port_text;
  if (!authority.empty() && authority.front() == '[') {
    auto close = authority.find(']');
    if (close == std::string_view::npos) throw fail("unterminated IPv6 literal");
    host = authority.substr(0, close + 1);
    auto after = authority.substr(close + 1);
    if (!after.empty()) {
      if (after.front() != ':') throw fail("garbage after IPv6 literal");
      port_text = after.substr(1);
    }
  } else {
    auto colon = authority.rfind(':');
    if (colon != std::string_view::npos) {
      host = authority.substr(0, colon);
      port_text = authority.substr(colon + 1);
    }
    if (!std::all_of(host.begin(), host.end(), [](unsigned char c) { return detail::is_host_char(c); }))
      throw fail("invalid host");
  }
  if (host.empty()) throw fail("empty host");
  u.host = to_lower(host);
  if (port_text) {
    if (!detail::is_digits(*port_text) || port_text->size() > 5 || port_text->front() == '0')
      throw fail("invalid port");
    auto port = std::stoul(std::string(*port_text));
    if (port > 65535) throw fail("port out of range");
    u.port = static_cast<std::uint16_t>(port);
  }

  auto hash = rest.find('#');
  if (hash != std::string_view::npos) {
    u.fragment = std::string(rest.substr(hash + 1));
    rest = rest.substr(0, hash);
  }
  auto qmark = rest.find('?');
  u.path = std::string(rest.substr(0, qmark));
  if (qmark != std::string_view::npos) u.query = detail::split_query(rest.substr(qmark + 1));
  return u;
}

inline std::string format_urir(const UriR& u) {
  std::string out = u.scheme + "://" + u.host;
  if (u.port) out += ":" + std::to_string(*u.port);
  out += u.path;
  if (!u.query.empty()) out += "?" + detail::join_query(u.query);
  if (u.fragment) out += "#" + *u.fragment;
  return out;
}

/// Opaque, SURT-inspired canonical key.
struct CanonicalKey {
  std::string value;

  auto operator<=>(const CanonicalKey&) const = default;
};

struct FuzzyRuleSet {
  std::set<std::string> strip_params;
  bool strip_numeric_only_params = false;
  std::size_t threshold_digits = 8;

  bool empty() const { return strip_params.empty() && !strip_numeric_only_params; }

  bool strips(const QueryParam& p) const {
    if (strip_params.count(p.name)) return true;
    return strip_numeric_only_params && p.value && detail::is_digits(*p.value) &&
           p.value->size() > threshold_digits;
  }
};

inline std::optional<std::uint16_t> default_port(std::string_view scheme) {
  if (scheme == "http") return 80;
  if (scheme == "https") return 443;
  return std::nullopt;
}

/// The normalized URI-R behind canonicalize(): default port and fragment
/// dropped, empty path becomes "/", empty query fragments removed, query
/// parameters stably sorted by name.
inline UriR canonical_uri(UriR u) {
  u.scheme = to_lower(u.scheme);
  u.host = to_lower(u.host);
  if (u.port && u.port == default_port(u.scheme)) u.port.reset();
  if (u.path.empty()) u.path = "/";
  u.fragment.reset();
  std::erase_if(u.query, [](const QueryParam& p) { return p.name.empty() && !p.value; });
  std::stable_sort(u.query.begin(), u.query.end(),
                   [](const QueryParam& a, const QueryParam& b) { return a.name < b.name; });
  return u;
}

namespace detail {

inline bool is_ip_literal(std::string_view host) {
  if (!host.empty() && host.front() == '[') return true;
  return std::all_of(host.begin(), host.end(),
                     [](unsigned char c) { return std::isdigit(c) || c == '.'; });
}

// "www.esdica.pt" -> "pt,esdica,www,"
inline std::string surt_host(std::string_view host) {
  if (is_ip_literal(host)) return std::string(host);
  std::vector<std::string_view> labels;
  std::size_t start = 0;
  while (true) {
    auto dot = host.find('.', start);
    labels.push_back(host.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  std::string out;
  for (auto it = labels.rbegin(); it != labels.rend(); ++it) {
    out += *it;
    out += ',';
  }
  return out;
}

inline CanonicalKey surt_key(const UriR& c) {
  std::string key = c.scheme + "://(" + surt_host(c.host);
  if (c.port) key += ":" + std::to_string(*c.port);
  key += ")" + c.path;
  if (!c.query.empty()) key += "?" + join_query(c.query);
  return {key};
}

}  // namespace detail

inline CanonicalKey canonicalize(const UriR& u) { return detail::surt_key(canonical_uri(u)); }

/// The URI-R with the rule set applied (parameters stripped), before canonicalization.
inline UriR apply_fuzzy_rules(UriR u, const FuzzyRuleSet& rules) {
  std::erase_if(u.query, [&](const QueryParam& p) { return rules.strips(p); });
  return u;
}

inline CanonicalKey fuzzy_reduce(const UriR& u, const FuzzyRuleSet& rules) {
  return canonicalize(apply_fuzzy_rules(u, rules));
}

/// Names of query parameters whose value varies between URLs that are
/// otherwise identical (same host and path, same remaining parameters).
inline std::set<std::string> detect_volatile_params(std::span<const UriR> urls) {
  std::set<std::string> out;
  if (urls.size() < 2) return out;

  std::vector<UriR> canon;
  canon.reserve(urls.size());
  for (const auto& u : urls) canon.push_back(canonical_uri(u));

  std::set<std::string> names;
  for (const auto& c : canon)
    for (const auto& p : c.query) names.insert(p.name);

  for (const auto& name : names) {
    // (scheme, host, port, path, remaining params) -> distinct values seen for `name`
    std::map<std::string, std::set<std::optional<std::string>>> groups;
    for (const auto& c : canon) {
      std::vector<QueryParam> rest;
      std::vector<std::optional<std::string>> values;
      for (const auto& p : c.query) {
        if (p.name == name)
          values.push_back(p.value);
        else
          rest.push_back(p);
      }
      if (values.empty()) continue;
      UriR stripped = c;
      stripped.query = std::move(rest);
      auto& seen = groups[detail::surt_key(stripped).value];
      // Repeated occurrences within one URL are folded into one value.
      std::string joined;
      for (const auto& v : values) joined += (v ? "=" + *v : std::string("~")) + "\x1f";
      seen.insert(joined);
    }
    for (const auto& [_, seen] : groups) {
      if (seen.size() > 1) {
        out.insert(name);
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Timestamps

using SysSeconds = std::chrono::sys_seconds;

inline std::optional<SysSeconds> parse_timestamp14(std::string_view ts) {
  if (ts.size() != 14 || !detail::is_digits(ts)) return std::nullopt;
  auto num = [&](std::size_t pos, std::size_t len) { return std::stoi(std::string(ts.substr(pos, len))); };
  using namespace std::chrono;
  year_month_day ymd{year{num(0, 4)}, month{static_cast<unsigned>(num(4, 2))},
                     day{static_cast<unsigned>(num(6, 2))}};
  int hh = num(8, 2), mm = num(10, 2), ss = num(12, 2);
  if (!ymd.ok() || hh > 23 || mm > 59 || ss > 59) return std::nullopt;
  return sys_days{ymd} + hours{hh} + minutes{mm} + seconds{ss};
}

inline std::string format_timestamp14(SysSeconds t) {
  using namespace std::chrono;
  auto days = floor<std::chrono::days>(t);
  year_month_day ymd{days};
  hh_mm_ss hms{t - days};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d%02u%02u%02d%02d%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

/// RFC 1123 rendering, e.g. "Sun, 28 Jun 2009 04:40:51 GMT".
inline std::string format_http_date(SysSeconds t) {
  using namespace std::chrono;
  static constexpr const char* kDays[] = {"Sun", "Mon", "Tue", "Wed", "Thu", "Fri", "Sat"};
  static constexpr const char* kMonths[] = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                            "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
  auto days = floor<std::chrono::days>(t);
  year_month_day ymd{days};
  weekday wd{days};
  hh_mm_ss hms{t - days};
  char buf[40];
  std::snprintf(buf, sizeof buf, "%s, %02u %s %04d %02d:%02d:%02d GMT", kDays[wd.c_encoding()],
                static_cast<unsigned>(ymd.day()), kMonths[static_cast<unsigned>(ymd.month()) - 1],
                static_cast<int>(ymd.year()), static_cast<int>(hms.hours().count()),
                static_cast<int>(hms.minutes().count()), static_cast<int>(hms.seconds().count()));
  return buf;
}

// ---------------------------------------------------------------------------
// URI-M

enum class ModifierKind { none, im, js, cs, mp, oe, id, opaque };

class Modifier {
 public:
  Modifier() = default;

  static Modifier from_text(std::string_view text) {
    static constexpr std::pair<std::string_view, ModifierKind> kKnown[] = {
        {"", ModifierKind::none},  {"im_", ModifierKind::im}, {"js_", ModifierKind::js},
        {"cs_", ModifierKind::cs}, {"mp_", ModifierKind::mp}, {"oe_", ModifierKind::oe},
        {"id_", ModifierKind::id}};
    Modifier m;
    m.text_ = std::string(text);
    m.kind_ = ModifierKind::opaque;
    for (auto [t, k] : kKnown)
      if (t == text) m.kind_ = k;
    return m;
  }

  ModifierKind kind() const { return kind_; }
  const std::string& text() const { return text_; }

  bool operator==(const Modifier&) const = default;

 private:
  ModifierKind kind_ = ModifierKind::none;
  std::string text_;
};

struct UriM {
  std::string archive_prefix;
  std::string timestamp14;
  Modifier modifier;
  UriR target;

  bool operator==(const UriM&) const = default;
};

namespace detail {

// `20090628044051im_` -> ("20090628044051", "im_"); modifier is 2-3 lowercase
// letters followed by '_'.
inline bool split_timestamp_segment(std::string_view seg, std::string_view& ts, std::string_view& mod) {
  if (seg.size() < 14 || !is_digits(seg.substr(0, 14))) return false;
  auto m = seg.substr(14);
  if (!m.empty()) {
    if (m.size() < 3 || m.size() > 4 || m.back() != '_') return false;
    auto letters = m.substr(0, m.size() - 1);
    if (!std::all_of(letters.begin(), letters.end(), [](unsigned char c) { return std::islower(c); }))
      return false;
  }
  ts = seg.substr(0, 14);
  mod = m;
  return true;
}

}  // namespace detail

/// Splits a replay URL at its first `/{14 digits}{modifier}/` path segment.
/// Accepts absolute URLs and origin-relative paths ("/wayback/2009.../http://...").
inline UriM parse_urim(std::string_view url) {
  std::size_t path_start = 0;
  if (url.empty() || url.front() != '/') {
    auto sep = url.find("://");
    if (sep == std::string_view::npos)
      throw UriError(UriErrorCode::NoTimestampSegment, "not an absolute URL: " + std::string(url));
    path_start = url.find('/', sep + 3);
    if (path_start == std::string_view::npos)
      throw UriError(UriErrorCode::NoTimestampSegment, "no path in " + std::string(url));
  }
  std::size_t seg_start = path_start + 1;
  while (seg_start <= url.size()) {
    auto seg_end = url.find('/', seg_start);
    if (seg_end == std::string_view::npos) break;
    std::string_view ts, mod;
    if (detail::split_timestamp_segment(url.substr(seg_start, seg_end - seg_start), ts, mod)) {
      if (!parse_timestamp14(ts))
        throw UriError(UriErrorCode::InvalidTimestamp, "invalid datetime " + std::string(ts));
      UriM m;
      m.archive_prefix = std::string(url.substr(0, seg_start - 1));
      m.timestamp14 = std::string(ts);
      m.modifier = Modifier::from_text(mod);
      try {
        m.target = parse_urir(url.substr(seg_end + 1));
      } catch (const UriError& e) {
        throw UriError(UriErrorCode::MalformedTarget, e.what());
      }
      return m;
    }
    seg_start = seg_end + 1;
  }
  throw UriError(UriErrorCode::NoTimestampSegment, "no timestamp segment in " + std::string(url));
}

inline std::string format_urim(const UriM& m) {
  return m.archive_prefix + "/" + m.timestamp14 + m.modifier.text() + "/" + format_urir(m.target);
}

/// Parses either an absolute URL or an origin-relative path; relative paths are
/// resolved against `origin`.
inline UriR parse_url_lenient(std::string_view url, std::string_view origin = "http://localhost") {
  if (!url.empty() && url.front() == '/') return parse_urir(std::string(origin) + std::string(url));
  return parse_urir(url);
}

}  // namespace replay_shield

template <>
struct std::hash<replay_shield::CanonicalKey> {
  std::size_t operator()(const replay_shield::CanonicalKey& k) const noexcept {
    return std::hash<std::string>{}(k.value);
  }
};

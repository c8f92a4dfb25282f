#pragma once

// YAML configuration for the proxy/upstream servers and page spec files.
//
//   listen: 127.0.0.1:8080
//   upstream: 127.0.0.1:8081
//   injection: {mode: always, header: "public, max-age=600"}
//   cache: {enabled: true, statuses: [200, 404], max_age: 600, key_mode: exact, capacity: 10000}
//   throttle: {enabled: false, window_seconds: 30, max_requests: 1, prefixes: [/save/_embed/]}
//   upstream_sim: {manifest: mre.tsv, patch: off, listen: 127.0.0.1:8081}

#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>

#include <yaml-cpp/yaml.h>

#include "replay_shield/proxy.hpp"
#include "replay_shield/upstream.hpp"
#include "replay_shield/workload.hpp"

namespace replay_shield {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct UpstreamSettings {
  std::optional<std::filesystem::path> manifest;
  PatchMode patch = PatchMode::off;
  std::string listen = "127.0.0.1:8081";
};

struct AppConfig {
  ProxyConfig proxy;
  UpstreamSettings upstream;
};

struct HostPort {
  std::string host;
  int port = 0;
};

inline HostPort parse_host_port(const std::string& s) {
  auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == s.size())
    throw ConfigError("expected HOST:PORT, got '" + s + "'");
  auto port_text = s.substr(colon + 1);
  if (!detail::is_digits(port_text) || port_text.size() > 5 || std::stoi(port_text) > 65535)
    throw ConfigError("bad port in '" + s + "'");
  return {s.substr(0, colon), std::stoi(port_text)};
}

namespace detail {

inline void check_keys(const YAML::Node& node, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!node.IsMap()) throw ConfigError(where + " must be a mapping");
  for (const auto& kv : node) {
    auto key = kv.first.as<std::string>();
    bool ok = false;
    for (const char* a : allowed) ok |= key == a;
    if (!ok) throw ConfigError("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <typename T>
T get(const YAML::Node& node, const char* key, const std::string& where, T fallback) {
  if (!node[key]) return fallback;
  try {
    return node[key].as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("bad value for " + (where.empty() ? std::string(key) : where + "." + key));
  }
}

}  // namespace detail

inline AppConfig parse_app_config(const YAML::Node& root, const std::filesystem::path& base_dir = ".") {
  using detail::get;
  AppConfig cfg;
  if (!root || root.IsNull()) return cfg;
  detail::check_keys(root, "", {"listen", "upstream", "injection", "cache", "throttle", "upstream_sim"});
  auto& p = cfg.proxy;
  p.listen_address = get<std::string>(root, "listen", "", p.listen_address);
  p.upstream_address = get<std::string>(root, "upstream", "", p.upstream_address);
  parse_host_port(p.listen_address);
  parse_host_port(p.upstream_address);

  try {
    if (auto inj = root["injection"]) {
      detail::check_keys(inj, "injection", {"mode", "header"});
      p.injection.mode = parse_injection_mode(get<std::string>(inj, "mode", "injection", "always"));
      p.injection.header_value = get<std::string>(inj, "header", "injection", p.injection.header_value);
    }
    if (auto cache = root["cache"]) {
      detail::check_keys(cache, "cache",
                         {"enabled", "statuses", "max_age", "key_mode", "capacity", "respect_upstream", "coalesce"});
      p.proxy_caching_enabled = get<bool>(cache, "enabled", "cache", p.proxy_caching_enabled);
      if (cache["statuses"]) {
        auto v = get<std::vector<int>>(cache, "statuses", "cache", {});
        p.policy.cacheable_statuses = std::set<int>(v.begin(), v.end());
      }
      p.policy.default_max_age = get<double>(cache, "max_age", "cache", p.policy.default_max_age);
      p.policy.key_mode = parse_key_mode(get<std::string>(cache, "key_mode", "cache", "exact"));
      p.policy.capacity = get<std::size_t>(cache, "capacity", "cache", p.policy.capacity);
      p.policy.respect_upstream_directives =
          get<bool>(cache, "respect_upstream", "cache", p.policy.respect_upstream_directives);
      p.coalesce_requests = get<bool>(cache, "coalesce", "cache", p.coalesce_requests);
    }
    if (auto th = root["throttle"]) {
      detail::check_keys(th, "throttle", {"enabled", "window_seconds", "max_requests", "prefixes"});
      p.throttle.enabled = get<bool>(th, "enabled", "throttle", p.throttle.enabled);
      p.throttle.window_seconds = get<double>(th, "window_seconds", "throttle", p.throttle.window_seconds);
      p.throttle.max_requests_per_key = get<std::size_t>(th, "max_requests", "throttle", p.throttle.max_requests_per_key);
      if (th["prefixes"]) p.throttle.matched_path_prefixes = get<std::vector<std::string>>(th, "prefixes", "throttle", {});
    }
    if (auto up = root["upstream_sim"]) {
      detail::check_keys(up, "upstream_sim", {"manifest", "patch", "listen"});
      if (up["manifest"]) cfg.upstream.manifest = base_dir / get<std::string>(up, "manifest", "upstream_sim", "");
      cfg.upstream.patch = parse_patch_mode(get<std::string>(up, "patch", "upstream_sim", "off"));
      cfg.upstream.listen = get<std::string>(up, "listen", "upstream_sim", cfg.upstream.listen);
      parse_host_port(cfg.upstream.listen);
    }
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline AppConfig load_app_config(const std::filesystem::path& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::BadFile&) {
    throw ConfigError("cannot read config " + path.string());
  } catch (const YAML::Exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_app_config(root, path.parent_path());
}

// ---------------------------------------------------------------------------
// Page spec files

struct PageSpecFile {
  PageSpec page;
  std::optional<std::filesystem::path> manifest;
};

inline PageSpec parse_page_spec(const YAML::Node& root) {
  using detail::get;
  detail::check_keys(root, "", {"name", "duration", "essential_resources", "behaviors", "manifest"});
  PageSpec spec;
  spec.name = get<std::string>(root, "name", "", "page");
  spec.duration = get<double>(root, "duration", "", 60);
  spec.essential_resources = get<std::vector<std::string>>(root, "essential_resources", "", {});
  if (auto behaviors = root["behaviors"]) {
    if (!behaviors.IsSequence()) throw ConfigError("behaviors must be a list");
    for (const auto& b : behaviors) {
      auto type = get<std::string>(b, "type", "behaviors", "");
      double start = get<double>(b, "start", "behaviors", 0);
      if (type == "carousel") {
        detail::check_keys(b, "behaviors", {"type", "urls", "period", "start"});
        spec.behaviors.push_back(CarouselLoop{get<std::vector<std::string>>(b, "urls", "behaviors", {}),
                                              get<double>(b, "period", "behaviors", 1), start});
      } else if (type == "loader_retry") {
        detail::check_keys(b, "behaviors", {"type", "url_template", "count", "cycle_period", "start"});
        spec.behaviors.push_back(LoaderRetry{get<std::string>(b, "url_template", "behaviors", ""),
                                             get<int>(b, "count", "behaviors", 1),
                                             get<double>(b, "cycle_period", "behaviors", 1), start});
      } else if (type == "onerror_fallback") {
        detail::check_keys(b, "behaviors", {"type", "primary", "fallback_template", "retry_period", "start"});
        spec.behaviors.push_back(OnErrorFallback{get<std::string>(b, "primary", "behaviors", ""),
                                                 get<std::string>(b, "fallback_template", "behaviors", ""),
                                                 get<double>(b, "retry_period", "behaviors", 1), start});
      } else if (type == "xhr_poll") {
        detail::check_keys(b, "behaviors", {"type", "url", "interval", "start"});
        spec.behaviors.push_back(XhrPoll{get<std::string>(b, "url", "behaviors", ""),
                                         get<double>(b, "interval", "behaviors", 1), start});
      } else {
        throw ConfigError("unknown behavior type '" + type + "'");
      }
    }
  }
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

inline PageSpecFile load_page_spec(const std::filesystem::path& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::BadFile&) {
    throw ConfigError("cannot read page spec " + path.string());
  } catch (const YAML::Exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  PageSpecFile f{parse_page_spec(root), std::nullopt};
  if (root["manifest"]) f.manifest = path.parent_path() / root["manifest"].as<std::string>();
  return f;
}

inline std::string dump_page_spec(const PageSpec& spec) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << spec.name;
  out << YAML::Key << "duration" << YAML::Value << spec.duration;
  out << YAML::Key << "essential_resources" << YAML::Value << spec.essential_resources;
  out << YAML::Key << "behaviors" << YAML::Value << YAML::BeginSeq;
  for (const auto& b : spec.behaviors) {
    out << YAML::BeginMap;
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, CarouselLoop>) {
            out << YAML::Key << "type" << YAML::Value << "carousel";
            out << YAML::Key << "urls" << YAML::Value << v.urls;
            out << YAML::Key << "period" << YAML::Value << v.period;
          } else if constexpr (std::is_same_v<T, LoaderRetry>) {
            out << YAML::Key << "type" << YAML::Value << "loader_retry";
            out << YAML::Key << "url_template" << YAML::Value << v.url_template;
            out << YAML::Key << "count" << YAML::Value << v.count;
            out << YAML::Key << "cycle_period" << YAML::Value << v.cycle_period;
          } else if constexpr (std::is_same_v<T, OnErrorFallback>) {
            out << YAML::Key << "type" << YAML::Value << "onerror_fallback";
            out << YAML::Key << "primary" << YAML::Value << v.primary;
            out << YAML::Key << "fallback_template" << YAML::Value << v.fallback_template;
            out << YAML::Key << "retry_period" << YAML::Value << v.retry_period;
          } else {
            out << YAML::Key << "type" << YAML::Value << "xhr_poll";
            out << YAML::Key << "url" << YAML::Value << v.url;
            out << YAML::Key << "interval" << YAML::Value << v.interval;
          }
          out << YAML::Key << "start" << YAML::Value << v.start;
        },
        b);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace replay_shield

#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <set>
#include <thread>

#include "replay_shield/proxy.hpp"
#include "support/oracles.hpp"

using namespace replay_shield;

namespace {

const std::string kMissingImage =
    "/wayback/20220301120000im_/https://carousel-demo.example.org/images/img1.jpg";

struct CountingUpstream {
  std::size_t calls = 0;
  int status = 404;
  Headers headers{{"Content-Type", "text/html"}};

  ProxyCore::Upstream fn() {
    return [this](const Request&, Timestamp) {
      ++calls;
      return Response{status, headers, "body"};
    };
  }
};

ProxyConfig caching_config() {
  ProxyConfig cfg;
  cfg.proxy_caching_enabled = true;
  cfg.injection.mode = InjectionMode::always;
  return cfg;
}

Request get(const std::string& target) { return {"GET", target, {}}; }

}  // namespace

TEST(Proxy, MissingImageCachedWithInjectedHeader) {
  CountingUpstream up;
  ProxyCore proxy(caching_config(), up.fn());
  auto first = proxy.handle_request(get(kMissingImage), 0);
  EXPECT_EQ(first.status, 404);
  EXPECT_EQ(find_header(first.headers, "Cache-Control"), "public, max-age=600");
  EXPECT_EQ(find_header(first.headers, "X-Cache"), "MISS");
  auto second = proxy.handle_request(get(kMissingImage), 1);
  EXPECT_EQ(second.status, 404);
  EXPECT_EQ(find_header(second.headers, "X-Cache"), "HIT");
  EXPECT_EQ(second.body, first.body);
  EXPECT_EQ(up.calls, 1u);
  EXPECT_EQ(proxy.metrics_snapshot().upstream_requests, 1u);
}

TEST(Proxy, NoCachingNoInjection) {
  CountingUpstream up;
  ProxyConfig cfg;
  cfg.proxy_caching_enabled = false;
  cfg.injection.mode = InjectionMode::off;
  ProxyCore proxy(cfg, up.fn());
  for (int i = 0; i < 10; ++i) {
    auto r = proxy.handle_request(get(kMissingImage), i);
    EXPECT_FALSE(has_header(r.headers, "Cache-Control"));
  }
  auto m = proxy.metrics_snapshot();
  EXPECT_EQ(m.client_requests, 10u);
  EXPECT_EQ(m.upstream_requests, 10u);
  EXPECT_EQ(m.cache_hits_fresh, 0u);
  EXPECT_EQ(up.calls, 10u);
}

TEST(Proxy, TenRequestsOneUpstream) {
  CountingUpstream up;
  ProxyCore proxy(caching_config(), up.fn());
  for (int i = 0; i < 10; ++i) proxy.handle_request(get(kMissingImage), i * 0.5);
  auto m = proxy.metrics_snapshot();
  EXPECT_EQ(m.client_requests, 10u);
  EXPECT_EQ(m.upstream_requests, 1u);
  EXPECT_EQ(m.cache_hits_fresh, 9u);
  EXPECT_EQ(m.responses_by_status[404], 10u);
}

TEST(Proxy, SaveEmbedThrottled) {
  CountingUpstream up;
  auto cfg = caching_config();
  cfg.proxy_caching_enabled = false;
  cfg.throttle.enabled = true;
  ProxyCore proxy(cfg, up.fn());
  EXPECT_EQ(proxy.handle_request(get("/save/_embed/http://x/y.jpg"), 0).status, 404);
  auto second = proxy.handle_request(get("/save/_embed/http://x/y.jpg"), 12);
  EXPECT_EQ(second.status, 429);
  EXPECT_EQ(find_header(second.headers, "Retry-After"), "18");
  EXPECT_EQ(up.calls, 1u);
  EXPECT_EQ(proxy.metrics_snapshot().throttled_429, 1u);
}

TEST(Proxy, StaleEntryRefetched) {
  CountingUpstream up;
  auto cfg = caching_config();
  cfg.injection.header_value = "public, max-age=5";
  ProxyCore proxy(cfg, up.fn());
  proxy.handle_request(get("/a"), 0);
  proxy.handle_request(get("/a"), 4.9);
  proxy.handle_request(get("/a"), 5);
  proxy.handle_request(get("/a"), 6);
  EXPECT_EQ(up.calls, 2u);
}

TEST(Proxy, UpstreamDownGives502) {
  ProxyCore proxy(caching_config(), [](const Request&, Timestamp) -> Response { throw UpstreamUnreachable("down"); });
  auto r = proxy.handle_request(get("/x"), 0);
  EXPECT_EQ(r.status, 502);
  EXPECT_EQ(proxy.cache().size(), 0u);
  EXPECT_TRUE(proxy.metrics_snapshot().conserved());
}

TEST(Proxy, BadRequestsAndMetricsEndpoint) {
  CountingUpstream up;
  ProxyCore proxy(caching_config(), up.fn());
  EXPECT_EQ(proxy.handle_request({"GET", "http://absolute/x", {}}, 0).status, 400);
  EXPECT_EQ(proxy.handle_request({"G ET", "/x", {}}, 0).status, 400);
  EXPECT_EQ(proxy.handle_request({"GET", "/a b", {}}, 0).status, 400);
  proxy.handle_request(get("/x"), 0);
  auto m = proxy.handle_request(get("/__metrics"), 0);
  EXPECT_EQ(m.status, 200);
  EXPECT_NE(m.body.find("client_requests 1\n"), std::string::npos);
  EXPECT_NE(m.body.find("upstream_requests 1\n"), std::string::npos);
  EXPECT_NE(m.body.find("bad_requests 3\n"), std::string::npos);
  EXPECT_EQ(up.calls, 1u);
}

TEST(Proxy, NonGetNotCached) {
  CountingUpstream up;
  up.status = 200;
  ProxyCore proxy(caching_config(), up.fn());
  proxy.handle_request({"HEAD", "/x", {}}, 0);
  proxy.handle_request({"HEAD", "/x", {}}, 1);
  proxy.handle_request({"POST", "/x", {}}, 1);
  EXPECT_EQ(up.calls, 3u);
  EXPECT_EQ(proxy.cache().size(), 0u);
}

TEST(Proxy, UpstreamNoStoreOverriddenOnlyWhenInjecting) {
  CountingUpstream up;
  up.headers.emplace_back("Cache-Control", "no-store");
  auto cfg = caching_config();
  cfg.injection.mode = InjectionMode::missing_only;
  ProxyCore proxy(cfg, up.fn());
  auto r = proxy.handle_request(get("/x"), 0);
  EXPECT_EQ(find_header(r.headers, "Cache-Control"), "no-store");
  proxy.handle_request(get("/x"), 1);
  EXPECT_EQ(up.calls, 2u);
}

TEST(Proxy, InvalidInjectedHeaderRejected) {
  auto cfg = caching_config();
  cfg.injection.header_value = "public, private, max-age=1";
  EXPECT_THROW(ProxyCore(cfg, CountingUpstream{}.fn()), std::invalid_argument);
}

TEST(Proxy, KeyModes) {
  CountingUpstream up;
  auto cfg = caching_config();
  cfg.policy.key_mode = KeyMode::fuzzy;
  ProxyCore fuzzy(cfg, up.fn());
  for (int i = 0; i < 50; ++i)
    fuzzy.handle_request(get("/web/20210901092756/https://d.livesport.com/feed?ts=16304896" + std::to_string(75000 + i)), i);
  EXPECT_EQ(up.calls, 1u);

  // Modifiers and timestamps are never collapsed.
  auto a = fuzzy.cache_key_for(get("/wayback/20090628044051im_/http://a.com/x"));
  auto b = fuzzy.cache_key_for(get("/wayback/20090628044051js_/http://a.com/x"));
  auto c = fuzzy.cache_key_for(get("/wayback/20090628044052im_/http://a.com/x"));
  EXPECT_NE(a, b);
  EXPECT_NE(a, c);

  cfg.policy.key_mode = KeyMode::canonical;
  ProxyCore canonical(cfg, up.fn());
  EXPECT_EQ(canonical.cache_key_for(get("/wayback/20090628044051/http://A.com:80/x?b=1&a=2#f")),
            canonical.cache_key_for(get("/wayback/20090628044051/http://a.com/x?a=2&b=1")));
  cfg.policy.key_mode = KeyMode::exact;
  ProxyCore exact(cfg, up.fn());
  EXPECT_NE(exact.cache_key_for(get("/x?b=1&a=2")), exact.cache_key_for(get("/x?a=2&b=1")));
}

TEST(Proxy, InjectionModes) {
  Response r404{404, {}, "x"};
  Response r200{200, {{"Cache-Control", "no-store"}}, "y"};
  InjectionConfig always;
  EXPECT_EQ(find_header(inject_cache_control(r404, always).headers, "Cache-Control"), "public, max-age=600");
  EXPECT_EQ(find_header(inject_cache_control(r200, always).headers, "Cache-Control"), "public, max-age=600");
  EXPECT_EQ(inject_cache_control(r200, {"public, max-age=600", InjectionMode::missing_only}).headers, r200.headers);
  Response plain200{200, {}, "z"};
  EXPECT_EQ(inject_cache_control(plain200, {"public, max-age=600", InjectionMode::status_404_only}).headers,
            plain200.headers);
  EXPECT_EQ(find_header(inject_cache_control(r404, {"public, max-age=600", InjectionMode::status_404_only}).headers,
                        "Cache-Control"),
            "public, max-age=600");
  EXPECT_TRUE(inject_cache_control(r404, {"x", InjectionMode::off}).headers.empty());
  EXPECT_THROW(parse_injection_mode("sometimes"), std::invalid_argument);
}

TEST(ProxyProperty, InjectionPreservesStatusAndBody) {
  std::mt19937 rng(1);
  const InjectionMode modes[] = {InjectionMode::always, InjectionMode::missing_only, InjectionMode::status_404_only,
                                 InjectionMode::off};
  oracle::UrlGen gen(2);
  for (int i = 0; i < 1000; ++i) {
    Response r{gen.uniform(100, 599), {}, gen.word(0, 40)};
    if (gen.coin()) r.headers.emplace_back("Cache-Control", gen.word());
    if (gen.coin()) r.headers.emplace_back("cache-control", gen.word());
    auto out = inject_cache_control(r, {"public, max-age=600", modes[rng() % 4]});
    EXPECT_EQ(out.status, r.status);
    EXPECT_EQ(out.body, r.body);
  }
}

namespace {

struct TraceStep {
  Request request;
  double t;
};

std::vector<TraceStep> random_trace(std::mt19937& rng, std::size_t n, bool get_only) {
  std::vector<std::string> pool;
  std::uniform_int_distribution<int> npool(5, 60);
  for (int i = npool(rng); i > 0; --i) {
    auto id = std::to_string(i);
    switch (rng() % 3) {
      case 0: pool.push_back("/wayback/20220301120000im_/http://a.com/img" + id + ".jpg"); break;
      case 1: pool.push_back("/save/_embed/http://a.com/img" + id + ".jpg"); break;
      default: pool.push_back("/feed?x=" + id); break;
    }
  }
  std::vector<TraceStep> trace;
  double t = 0;
  for (std::size_t i = 0; i < n; ++i) {
    t += std::uniform_int_distribution<int>(0, 5)(rng) / 10.0;
    std::string method = !get_only && rng() % 10 == 0 ? "HEAD" : "GET";
    trace.push_back({{method, pool[rng() % pool.size()], {}}, t});
  }
  return trace;
}

}  // namespace

TEST(ProxyProperty, Conservation) {
  std::mt19937 rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    ProxyConfig cfg;
    cfg.proxy_caching_enabled = rng() % 4 != 0;
    cfg.injection.mode = static_cast<InjectionMode>(rng() % 4);
    cfg.injection.header_value = "public, max-age=" + std::to_string(rng() % 20);
    cfg.throttle.enabled = rng() % 2 == 0;
    cfg.throttle.window_seconds = 1 + rng() % 30;
    cfg.policy.capacity = 1 + rng() % 40;
    cfg.policy.key_mode = static_cast<KeyMode>(rng() % 3);
    std::mt19937 up_rng(rng());
    ProxyCore proxy(cfg, [&](const Request&, Timestamp) -> Response {
      switch (up_rng() % 6) {
        case 0: throw UpstreamUnreachable("flaky");
        case 1: return {200, {{"Cache-Control", "no-store"}}, "ok"};
        case 2: return {500, {}, "err"};
        case 3: return {200, {{"Cache-Control", "max-age=3"}}, "ok"};
        default: return {404, {}, "missing"};
      }
    });
    auto trace = random_trace(rng, 1000 + rng() % 500, false);
    std::size_t hits = 0, misses = 0, throttled = 0;
    for (const auto& step : trace) {
      auto r = proxy.handle_request(step.request, step.t);
      if (r.status == 429)
        ++throttled;
      else if (find_header(r.headers, "X-Cache") == "HIT")
        ++hits;
      else
        ++misses;
    }
    auto m = proxy.metrics_snapshot();
    ASSERT_TRUE(m.conserved()) << "trial " << trial;
    EXPECT_EQ(m.client_requests, trace.size());
    EXPECT_EQ(m.cache_hits_fresh, hits);
    EXPECT_EQ(m.upstream_requests, misses);
    EXPECT_EQ(m.throttled_429, throttled);
  }
}

TEST(ProxyProperty, DistinctUrlBoundAndMonotonicity) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto trace = random_trace(rng, 200 + rng() % 800, true);
    std::set<std::string> distinct;
    for (const auto& s : trace) distinct.insert(s.request.target);
    ASSERT_LT(trace.back().t, 600);  // horizon below the injected lifetime

    auto run = [&](bool caching) {
      ProxyConfig cfg;
      cfg.proxy_caching_enabled = caching;
      cfg.policy.key_mode = KeyMode::exact;
      std::size_t calls = 0;
      ProxyCore proxy(cfg, [&](const Request&, Timestamp) {
        ++calls;
        return Response{calls % 2 ? 404 : 200, {}, "b"};
      });
      for (const auto& s : trace) proxy.handle_request(s.request, s.t);
      EXPECT_EQ(calls, proxy.metrics_snapshot().upstream_requests);
      return proxy.metrics_snapshot().upstream_requests;
    };
    auto cached = run(true);
    EXPECT_EQ(cached, distinct.size()) << "trial " << trial;
    EXPECT_GE(run(false), cached);
  }
}

TEST(ProxyProperty, MonotonicityWithThrottle) {
  std::mt19937 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto trace = random_trace(rng, 500, false);
    auto run = [&](bool caching) {
      ProxyConfig cfg;
      cfg.proxy_caching_enabled = caching;
      cfg.throttle.enabled = true;
      cfg.injection.header_value = "public, max-age=" + std::to_string(1 + trial % 10);
      ProxyCore proxy(cfg, [](const Request&, Timestamp) { return Response{404, {}, ""}; });
      for (const auto& s : trace) proxy.handle_request(s.request, s.t);
      return proxy.metrics_snapshot().upstream_requests;
    };
    EXPECT_GE(run(false), run(true));
  }
}

TEST(Proxy, CoalescingCollapsesConcurrentMisses) {
  auto cfg = caching_config();
  cfg.coalesce_requests = true;
  std::atomic<int> calls{0};
  std::atomic<bool> release{false};
  ProxyCore proxy(cfg, [&](const Request&, Timestamp) {
    ++calls;
    while (!release) std::this_thread::yield();
    return Response{404, {}, "x"};
  });
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) threads.emplace_back([&] { proxy.handle_request(get("/same"), 0); });
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  release = true;
  for (auto& t : threads) t.join();
  EXPECT_EQ(calls.load(), 1);
  auto m = proxy.metrics_snapshot();
  EXPECT_EQ(m.client_requests, 8u);
  EXPECT_TRUE(m.conserved());
}

TEST(Proxy, ConcurrentRequestsConserve) {
  ProxyCore proxy(caching_config(), [](const Request&, Timestamp) { return Response{404, {}, "x"}; });
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i)
    threads.emplace_back([&, i] {
      for (int j = 0; j < 500; ++j) proxy.handle_request(get("/k" + std::to_string((i * 7 + j) % 20)), j * 0.01);
    });
  for (auto& t : threads) t.join();
  auto m = proxy.metrics_snapshot();
  EXPECT_EQ(m.client_requests, 2000u);
  EXPECT_TRUE(m.conserved());
  EXPECT_GE(m.upstream_requests, 20u);
}

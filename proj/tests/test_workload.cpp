#include <gtest/gtest.h>

#include <climits>
#include <cmath>

#include <map>
#include <random>
#include <set>
#include <sstream>

#include "replay_shield/experiment.hpp"
#include "replay_shield/workload.hpp"
#include "support/oracles.hpp"

using namespace replay_shield;

namespace {

Response missing() { return {404, {{"Content-Type", "text/html"}}, "nope"}; }
Response missing_cacheable() { return {404, {{"Cache-Control", "public, max-age=600"}}, "nope"}; }

Transport always(Response r) {
  return [r](const std::string&, const std::string&, double) { return r; };
}

// Firings of a periodic behavior inside [0, duration), all values in tenths of a second.
long firings(long start_tenths, long period_tenths, long duration_tenths) {
  if (start_tenths >= duration_tenths) return 0;
  return (duration_tenths - start_tenths + period_tenths - 1) / period_tenths;
}

std::map<std::string, std::size_t> network_per_url(const std::vector<ClientEvent>& events) {
  std::map<std::string, std::size_t> n;
  for (const auto& e : events)
    if (e.source == EventSource::network) ++n[e.url];
  return n;
}

}  // namespace

TEST(BrowserCache, Decisions) {
  auto ok = browser_cache_decide("u", {200, {}, ""});
  EXPECT_TRUE(ok.cache);
  EXPECT_FALSE(ok.lifetime);
  EXPECT_FALSE(browser_cache_decide("u", missing()).cache);
  auto neg = browser_cache_decide("u", missing_cacheable());
  EXPECT_TRUE(neg.cache);
  EXPECT_EQ(neg.lifetime, 600);
  EXPECT_FALSE(browser_cache_decide("u", {404, {{"Cache-Control", "max-age=0"}}, ""}).cache);
  EXPECT_FALSE(browser_cache_decide("u", {200, {{"Cache-Control", "no-store"}}, ""}).cache);
}

TEST(BrowserCache, ExpiryIsStrict) {
  BrowserCache c;
  c.offer("u", {404, {{"Cache-Control", "max-age=5"}}, ""}, 1);
  EXPECT_NE(c.fresh("u", 5.9), nullptr);
  EXPECT_EQ(c.fresh("u", 6), nullptr);
  c.offer("u", missing(), 7);
  EXPECT_EQ(c.size(), 0u);
  // Tick times carry rounding error: 28 * 0.1 - 8 * 0.1 is just under 2.
  c.offer("v", {404, {{"Cache-Control", "max-age=2"}}, ""}, 8 * 0.1);
  EXPECT_NE(c.fresh("v", 27 * 0.1), nullptr);
  EXPECT_EQ(c.fresh("v", 28 * 0.1), nullptr);
}

TEST(Limiter, Examples) {
  LimiterRule rule{true, 3};
  std::vector<int> three404{404, 404, 404}, two404{404, 404}, three200{200, 200, 200}, mixed{404, 500, 404};
  EXPECT_EQ(limiter_filter(three404, rule), LimiterDecision::suppress);
  EXPECT_EQ(limiter_filter(two404, rule), LimiterDecision::pass);
  EXPECT_EQ(limiter_filter(three200, rule), LimiterDecision::pass);
  EXPECT_EQ(limiter_filter(mixed, rule), LimiterDecision::pass);
  EXPECT_EQ(limiter_filter(three404, LimiterRule{false, 3}), LimiterDecision::pass);
  EXPECT_THROW((LimiterRule{true, 1}.validate()), std::invalid_argument);
}

TEST(RunPage, NoBehaviors) {
  PageSpec spec{"plain", {"/a", "/b", "/c"}, {}, 10};
  auto events = run_page(spec, always(missing()));
  EXPECT_EQ(events.size(), 3u);
  for (const auto& e : events) {
    EXPECT_EQ(e.t, 0);
    EXPECT_EQ(e.source, EventSource::network);
  }
}

TEST(RunPage, MreCacheOffAndOn) {
  auto s = builtin_scenario("mre");
  const auto& carousel = std::get<CarouselLoop>(s.page.behaviors.at(0));
  EXPECT_DOUBLE_EQ(carousel.period, 1.0 / 3.0);
  EXPECT_EQ(s.page.essential_resources.size(), 7u);

  auto off = run_in_process(s.page, s.store(), arm_config({}, false, InjectionMode::always));
  auto net_off = count_events(off.events, EventSource::network);
  EXPECT_GE(net_off, 166u);
  EXPECT_LE(net_off, 188u);
  EXPECT_EQ(net_off, 181u);

  auto on = run_in_process(s.page, s.store(), arm_config({}, true, InjectionMode::always));
  EXPECT_EQ(count_events(on.events, EventSource::network), 7u);
  EXPECT_EQ(on.proxy_metrics.upstream_requests, 7u);
  for (std::size_t i = 7; i < on.events.size(); ++i) EXPECT_EQ(on.events[i].source, EventSource::memory_cache);
}

TEST(RunPage, RedirectsAreFollowed) {
  Transport t = [](const std::string&, const std::string& url, double) {
    if (url == "/start") return Response{302, {{"Location", "/mid"}}, ""};
    if (url == "/mid") return Response{302, {{"Location", "/end"}}, ""};
    if (url == "/loop") return Response{302, {{"Location", "/loop"}}, ""};
    return Response{200, {}, "ok"};
  };
  PageSpec spec{"r", {"/start", "/loop"}, {}, 1};
  auto events = run_page(spec, t);
  ASSERT_EQ(events.size(), 3u + 6u);
  EXPECT_EQ(events[2].url, "/end");
  EXPECT_EQ(events[2].status, 200);
}

TEST(RunPage, TransportFailureIsStatusZero) {
  Transport t = [](const std::string&, const std::string&, double) -> Response { throw std::runtime_error("x"); };
  auto events = run_page(PageSpec{"f", {"/a"}, {}, 1}, t);
  ASSERT_EQ(events.size(), 1u);
  EXPECT_EQ(events[0].status, 0);
}

TEST(RunPage, LoaderRetryStopsOnceLoaded) {
  int calls_to_3 = 0;
  Transport t = [&](const std::string&, const std::string& url, double) {
    if (url == "/l-3.png" && ++calls_to_3 >= 2) return Response{200, {}, "img"};
    return missing();
  };
  PageSpec spec{"l", {}, {LoaderRetry{"/l-#.png", 4, 1.0, 0}}, 3};
  auto per_url = network_per_url(run_page(spec, t));
  EXPECT_EQ(per_url["/l-0.png"], 3u);
  EXPECT_EQ(per_url["/l-3.png"], 2u);
}

TEST(RunPage, OnErrorFallbackChain) {
  OnErrorFallback b{"/img/cover_300.jpg", "/resize.aspx?img=/upload/O/#&h=35&w=35", 2.0, 0};
  EXPECT_EQ(b.fallback_url(), "/resize.aspx?img=/upload/O/cover_300.jpg&h=35&w=35");
  auto per_url = network_per_url(run_page(PageSpec{"o", {}, {b}, 10}, always(missing())));
  EXPECT_EQ(per_url[b.primary], 5u);
  EXPECT_EQ(per_url[b.fallback_url()], 5u);

  Transport fallback_ok = [&](const std::string&, const std::string& url, double) {
    return url == b.fallback_url() ? Response{200, {}, "small"} : missing();
  };
  auto events = run_page(PageSpec{"o", {}, {b}, 10}, fallback_ok);
  EXPECT_EQ(network_per_url(events)[b.primary], 1u);
}

TEST(Scenarios, Shapes) {
  auto carousel = builtin_scenario("carousel12");
  const auto& loader = std::get<LoaderRetry>(carousel.page.behaviors.at(0));
  auto urls = loader.urls();
  ASSERT_EQ(urls.size(), 12u);
  EXPECT_NE(urls.front().find("loader-0.png"), std::string::npos);
  EXPECT_NE(urls.back().find("loader-11.png"), std::string::npos);

  auto feed = builtin_scenario("feed_poll");
  ASSERT_EQ(feed.page.behaviors.size(), 2u);
  for (const auto& b : feed.page.behaviors) EXPECT_TRUE(std::holds_alternative<XhrPoll>(b));
  EXPECT_THROW(builtin_scenario("nope"), UnknownScenario);
  for (const auto& name : builtin_scenario_names()) EXPECT_NO_THROW(builtin_scenario(name).page.validate());
}

TEST(Scenarios, FeedPollScheduleArithmetic) {
  auto s = builtin_scenario("feed_poll");
  auto off = run_in_process(s.page, s.store(), arm_config({}, false, InjectionMode::always));
  long expected = static_cast<long>(s.page.essential_resources.size());
  for (const auto& b : s.page.behaviors) {
    const auto& poll = std::get<XhrPoll>(b);
    expected += firings(std::lround(poll.start * 10), std::lround(poll.interval * 10),
                        std::lround(s.page.duration * 10));
  }
  EXPECT_EQ(expected, 1 + 2 * 12);
  EXPECT_EQ(static_cast<long>(count_events(off.events, EventSource::network)), expected);
}

TEST(Scenarios, CarouselCacheOnFetchesEachMissingImageOnce) {
  auto s = builtin_scenario("carousel12");
  auto on = run_in_process(s.page, s.store(), arm_config({}, true, InjectionMode::always));
  std::size_t upstream_404 = 0;
  for (const auto& e : on.events) upstream_404 += e.source == EventSource::network && e.status == 404;
  EXPECT_EQ(upstream_404, 12u);
  EXPECT_EQ(on.proxy_metrics.upstream_requests, 12u + s.page.essential_resources.size());
  EXPECT_EQ(on.upstream_request_count, on.proxy_metrics.upstream_requests);

  auto off = run_in_process(s.page, s.store(), arm_config({}, false, InjectionMode::always));
  EXPECT_NEAR(off.client_report.avg_per_minute, 1098.36, 1098.36 * 0.05);
}

TEST(Scenarios, EveryScenarioUpstreamEqualsDistinctUrls) {
  for (const auto& name : builtin_scenario_names()) {
    auto s = builtin_scenario(name);
    auto on = run_in_process(s.page, s.store(), arm_config({}, true, InjectionMode::always));
    std::set<std::string> distinct;
    for (const auto& e : on.events) distinct.insert(e.url);
    EXPECT_EQ(on.proxy_metrics.upstream_requests, distinct.size()) << name;
    EXPECT_TRUE(on.proxy_metrics.conserved());
    EXPECT_EQ(on.upstream_request_count, on.proxy_metrics.upstream_requests);
  }
}

namespace {

PageSpec random_spec(std::mt19937& rng, long& expected_network) {
  auto tenths = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  PageSpec spec;
  spec.name = "random";
  const long duration = tenths(1, 30) * 10;
  spec.duration = static_cast<double>(duration) / 10;
  for (int i = tenths(0, 4); i > 0; --i) spec.essential_resources.push_back("/e" + std::to_string(i));
  expected_network = static_cast<long>(spec.essential_resources.size());
  for (int i = tenths(0, 4); i > 0; --i) {
    long start = tenths(0, 30), period = tenths(1, 50);
    auto fire = firings(start, period, duration);
    double s = static_cast<double>(start) / 10, p = static_cast<double>(period) / 10;
    switch (rng() % 4) {
      case 0: {
        std::vector<std::string> urls;
        for (int u = tenths(1, 4); u > 0; --u) urls.push_back("/c" + std::to_string(i) + "-" + std::to_string(u));
        spec.behaviors.push_back(CarouselLoop{urls, p, s});
        expected_network += fire;
        break;
      }
      case 1: {
        int count = tenths(1, 12);
        spec.behaviors.push_back(LoaderRetry{"/l" + std::to_string(i) + "-#.png", count, p, s});
        expected_network += fire * count;
        break;
      }
      case 2:
        spec.behaviors.push_back(OnErrorFallback{"/p" + std::to_string(i) + ".jpg", "/fb?img=#", p, s});
        expected_network += fire * 2;
        break;
      default:
        spec.behaviors.push_back(XhrPoll{"/x" + std::to_string(i), p, s});
        expected_network += fire;
        break;
    }
  }
  return spec;
}

}  // namespace

TEST(RunPageProperty, NetworkCountMatchesSchedule) {
  std::mt19937 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    long expected = 0;
    auto spec = random_spec(rng, expected);
    auto events = run_page(spec, always(missing()));
    EXPECT_EQ(static_cast<long>(count_events(events, EventSource::network)), expected) << "trial " << trial;
  }
}

TEST(RunPageProperty, InjectionMeansOneNetworkEventPerUrl) {
  std::mt19937 rng(32);
  for (int trial = 0; trial < 200; ++trial) {
    long ignored = 0;
    auto spec = random_spec(rng, ignored);
    auto per_url = network_per_url(run_page(spec, always(missing_cacheable())));
    for (const auto& [url, n] : per_url) EXPECT_EQ(n, 1u) << url;
  }
}

TEST(RunPageProperty, LimiterBoundsRepeats) {
  std::mt19937 rng(33);
  for (int trial = 0; trial < 200; ++trial) {
    long ignored = 0;
    auto spec = random_spec(rng, ignored);
    LimiterRule rule{true, 2 + static_cast<int>(rng() % 4)};
    auto events = run_page(spec, always(missing()), rule);
    for (const auto& [url, n] : network_per_url(events)) EXPECT_LE(n, static_cast<std::size_t>(rule.min_repeats));
  }
}

TEST(RunPageProperty, FreshEntriesNeverHitNetwork) {
  std::mt19937 rng(34);
  for (int trial = 0; trial < 200; ++trial) {
    long ignored = 0;
    auto spec = random_spec(rng, ignored);
    const unsigned salt = rng();
    // Per-URL fixed outcome: some 200, some 404, some 404 with a short max-age.
    Transport t = [salt](const std::string&, const std::string& url, double) {
      auto h = (std::hash<std::string>{}(url) ^ salt) % 3;
      if (h == 0) return Response{200, {}, "ok"};
      if (h == 1) return Response{404, {{"Cache-Control", "max-age=2"}}, ""};
      return missing();
    };
    auto events = run_page(spec, t);
    std::map<std::string, long> fresh_until;  // url -> first tick at which the entry is stale
    for (const auto& e : events) {
      const long tick = std::lround(e.t * 10);
      auto it = fresh_until.find(e.url);
      bool fresh = it != fresh_until.end() && tick < it->second;
      if (e.source == EventSource::network) {
        ASSERT_FALSE(fresh) << e.url << " at " << e.t;
        if (e.status == 200)
          fresh_until[e.url] = LONG_MAX;
        else if ((std::hash<std::string>{}(e.url) ^ salt) % 3 == 1)
          fresh_until[e.url] = tick + 20;
      } else {
        ASSERT_TRUE(fresh) << e.url << " at " << e.t;
      }
    }
  }
}

TEST(RunPageProperty, Deterministic) {
  std::mt19937 rng(35);
  for (int trial = 0; trial < 20; ++trial) {
    long ignored = 0;
    auto spec = random_spec(rng, ignored);
    std::ostringstream a, b;
    write_events_csv(a, run_page(spec, always(missing())));
    write_events_csv(b, run_page(spec, always(missing())));
    EXPECT_EQ(a.str(), b.str());
  }
}

TEST(EventCsv, RoundTrip) {
  oracle::UrlGen gen(36);
  const EventSource sources[] = {EventSource::network, EventSource::memory_cache, EventSource::limiter_suppressed};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ClientEvent> events;
    for (int i = gen.uniform(0, 30); i > 0; --i) {
      std::string url = gen.url();
      if (gen.coin(0.2)) url += ",\"quoted\"";
      events.push_back({gen.uniform(0, 6000) / 10.0, url, sources[gen.uniform(0, 2)], gen.uniform(0, 599)});
    }
    std::stringstream io;
    write_events_csv(io, events);
    auto back = read_events_csv(io);
    ASSERT_EQ(back.size(), events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
      EXPECT_NEAR(back[i].t, events[i].t, 1e-9);
      EXPECT_EQ(back[i].url, events[i].url);
      EXPECT_EQ(back[i].source, events[i].source);
      EXPECT_EQ(back[i].status, events[i].status);
    }
  }
}

TEST(EventCsv, Errors) {
  std::istringstream bad_header("t,url,source,status\n");
  EXPECT_THROW(read_events_csv(bad_header), ParseError);
  std::istringstream bad_row(std::string(kEventCsvHeader) + "\n0.1,/a,network,abc\n");
  try {
    read_events_csv(bad_row);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::istringstream empty("");
  EXPECT_THROW(read_events_csv(empty), ParseError);
  std::istringstream bad_source(std::string(kEventCsvHeader) + "\n0.1,/a,disk,404\n");
  EXPECT_THROW(read_events_csv(bad_source), ParseError);
}

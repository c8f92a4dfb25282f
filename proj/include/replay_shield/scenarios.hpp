#pragma once

// Canned pages modelled on the archived pages that were observed generating
// recurring requests, each paired with an upstream manifest.

#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "replay_shield/upstream.hpp"
#include "replay_shield/workload.hpp"

namespace replay_shield {

class UnknownScenario : public std::invalid_argument {
 public:
  explicit UnknownScenario(const std::string& name) : std::invalid_argument("unknown scenario: " + name) {}
};

struct Scenario {
  PageSpec page;
  std::string manifest;  // manifest text, see parse_manifest()

  MementoStore store() const {
    std::istringstream in(manifest);
    return parse_manifest(in);
  }
};

inline const std::vector<std::string>& builtin_scenario_names() {
  static const std::vector<std::string> names{"mre", "carousel12", "onerror_playlist", "feed_poll"};
  return names;
}

namespace detail {

struct ManifestBuilder {
  std::string text;

  ManifestBuilder& record(std::string_view ts, int status, std::string_view type, std::string_view url,
                          std::string_view body = {}) {
    text += std::string(ts) + '\t' + std::to_string(status) + '\t' + std::string(type) + '\t' +
            std::string(url) + "\tinline:" + std::string(body) + '\n';
    return *this;
  }
  ManifestBuilder& comment(std::string_view c) {
    text += "# " + std::string(c) + '\n';
    return *this;
  }
};

// Carousel demo page: one HTML document, three supporting assets and three
// carousel images that were never archived. The carousel shows three images a
// second and starts cycling once the page has settled (t = 2 s).
inline Scenario mre_scenario() {
  const std::string ts = "20220301120000";
  const std::string site = "https://carousel-demo.example.org/";
  auto m = [&](std::string_view mod, const std::string& url) { return "/wayback/" + ts + std::string(mod) + "/" + url; };

  Scenario s;
  s.page.name = "mre";
  s.page.duration = 60;
  std::vector<std::string> images;
  for (int i = 1; i <= 3; ++i) images.push_back(m("im_", site + "images/img" + std::to_string(i) + ".jpg"));
  s.page.essential_resources = {m("", site + "MREcarousel.html"), m("cs_", site + "carousel.css"),
                                m("js_", "https://code.jquery.com/jquery-3.6.0.min.js"),
                                m("js_", site + "carousel.js")};
  s.page.essential_resources.insert(s.page.essential_resources.end(), images.begin(), images.end());
  s.page.behaviors.push_back(CarouselLoop{images, 1.0 / 3.0, 2.0});

  ManifestBuilder b;
  b.comment("carousel demo page; the three carousel images were not captured")
      .record(ts, 200, "text/html", site + "MREcarousel.html", "<html><body><div class=carousel></div></body></html>")
      .record(ts, 200, "text/css", site + "carousel.css", ".carousel{width:300px}")
      .record(ts, 200, "application/javascript", "https://code.jquery.com/jquery-3.6.0.min.js", "/* jquery */")
      .record(ts, 200, "application/javascript", site + "carousel.js", "/* cycle images */");
  for (int i = 1; i <= 3; ++i)
    b.record(ts, 404, "text/html", site + "images/img" + std::to_string(i) + ".jpg");
  s.manifest = b.text;
  return s;
}

// Slideshow loader iterating loader-0.png .. loader-11.png, re-requesting every
// image that failed on each pass. Cycle period tuned to ~1098 requests/minute.
inline Scenario carousel12_scenario() {
  const std::string ts = "20090628044051";
  const std::string site = "http://www.radiocomercial.iol.pt/";
  Scenario s;
  s.page.name = "carousel12";
  s.page.duration = 60;
  s.page.essential_resources = {"/wayback/" + ts + "/" + site,
                                "/wayback/20090628052553js_/" + site + "jscript/slideshow/slideshow.js"};
  s.page.behaviors.push_back(
      LoaderRetry{"/wayback/" + ts + "im_/" + site + "styles/slideshow/loader-#.png", 12, 0.6555, 0});

  ManifestBuilder b;
  b.comment("radio station page with a slideshow whose loader images are missing")
      .record(ts, 200, "text/html", site, "<html><body><div id=slideshow></div></body></html>")
      .record("20090628052553", 200, "application/javascript", site + "jscript/slideshow/slideshow.js",
              "/* slideshow loader */");
  for (int i = 0; i < 12; ++i)
    b.record(ts, 404, "image/png", site + "styles/slideshow/loader-" + std::to_string(i) + ".png");
  s.manifest = b.text;
  return s;
}

// Playlist cover image with an onerror handler that falls back to a resize
// endpoint, plus an XHR poll of the now-playing stylesheet. All three missing.
inline Scenario onerror_playlist_scenario() {
  const std::string ts = "20100803165224";
  const std::string site = "http://www.radiocomercial.iol.pt/";
  Scenario s;
  s.page.name = "onerror_playlist";
  s.page.duration = 60;
  s.page.essential_resources = {"/wayback/" + ts + "/" + site};
  s.page.behaviors.push_back(OnErrorFallback{
      "/wayback/" + ts + "im_/" + site + "global_aspx/images/o_aprendiz_de_feiticeiro_300.jpg",
      "/wayback/" + ts + "mp_/" + site + "global_aspx/resize.aspx?img=/upload/O/#&h=35&w=35", 2.0, 0});
  s.page.behaviors.push_back(XhrPoll{"/wayback/" + ts + "mp_/" + site + "xsl_files/includes/nowplaying.xsl", 10.0, 0});

  ManifestBuilder b;
  b.comment("playlist page; cover images, resize endpoint and now-playing feed are missing")
      .record(ts, 200, "text/html", site, "<html><body><ul id=playlist></ul></body></html>");
  s.manifest = b.text;
  return s;
}

// Live-score page polling two API feeds that could not be archived.
inline Scenario feed_poll_scenario() {
  Scenario s;
  s.page.name = "feed_poll";
  s.page.duration = 60;
  s.page.essential_resources = {"/web/20210901092755/https://www.livesport.com/en/"};
  for (const char* feed : {"u_0_1", "sys_1"})
    s.page.behaviors.push_back(
        XhrPoll{std::string("/web/20210901092756/https://d.livesport.com/en/x/feed/") + feed, 5.0, 0});

  ManifestBuilder b;
  b.comment("live score page; the feeds require authorization and were never captured")
      .record("20210901092755", 200, "text/html", "https://www.livesport.com/en/",
              "<html><body><div id=live-table></div></body></html>");
  s.manifest = b.text;
  return s;
}

}  // namespace detail

inline Scenario builtin_scenario(std::string_view name) {
  if (name == "mre") return detail::mre_scenario();
  if (name == "carousel12") return detail::carousel12_scenario();
  if (name == "onerror_playlist") return detail::onerror_playlist_scenario();
  if (name == "feed_poll") return detail::feed_poll_scenario();
  throw UnknownScenario(std::string(name));
}

}  // namespace replay_shield

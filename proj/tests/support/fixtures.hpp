#pragma once

#include <string>
#include <vector>

namespace fixture {

// Archived URLs in the shapes seen in replay logs of two public archives.
inline const std::vector<std::string> kArchiveUrls = {
    "https://arquivo.pt/wayback/20131105211447/http://esdica.pt/",
    "https://arquivo.pt/wayback/20131105211447/http://esdica.pt/imagens/banners/img03b.jpg",
    "https://arquivo.pt/wayback/20131105212033js_/http://esdica.pt/js/slider/jquery.advancedSlider.min.js",
    "https://arquivo.pt/wayback/20090628044051/http://www.radiocomercial.iol.pt/",
    "https://arquivo.pt/wayback/20090628044051im_/http://www.radiocomercial.iol.pt/styles/slideshow/loader-0.png",
    "https://arquivo.pt/wayback/20090628052553js_/http://www.radiocomercial.iol.pt/jscript/slideshow/slideshow.js",
    "https://arquivo.pt/wayback/20100803165224/http://www.radiocomercial.iol.pt/",
    "https://arquivo.pt/wayback/20100803165224mp_/http://www.radiocomercial.iol.pt/global_aspx/resize.aspx",
    "https://arquivo.pt/wayback/20100803165224mp_/http://www.radiocomercial.iol.pt/xsl_files/includes/nowplaying.xsl",
    "https://web.archive.org/web/20100822133654/http://www.radiocomercial.iol.pt/",
    "https://web.archive.org/web/20210901092755/https://www.livesport.com/en/",
    "https://web.archive.org/web/20210901092756/https://d.livesport.com/en/x/feed/u_0_1",
    "https://web.archive.org/web/20210901092756/https://d.livesport.com/en/x/feed/sys_1",
};

}  // namespace fixture

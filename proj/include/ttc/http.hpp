#pragma once

#include <string>

namespace ttc {

// "scheme://host[:port][/path]" split into the client origin and the path
// prefix (no trailing slash; empty when the URL has no path).
struct UrlParts {
    std::string origin;
    std::string path_prefix;
};

UrlParts split_url(const std::string& url);  // throws ConfigError on bad input

}  // namespace ttc

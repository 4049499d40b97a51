#include "ttc/http.hpp"

#include "ttc/error.hpp"

namespace ttc {

UrlParts split_url(const std::string& url) {
    size_t scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("url \"" + url + "\" lacks a scheme (expected http:// or https://)");
    }
    std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") {
        throw ConfigError("url \"" + url + "\" has unsupported scheme \"" + scheme + "\"");
    }
    size_t host_begin = scheme_end + 3;
    if (host_begin >= url.size()) throw ConfigError("url \"" + url + "\" lacks a host");
    size_t path_begin = url.find('/', host_begin);
    UrlParts parts;
    if (path_begin == std::string::npos) {
        parts.origin = url;
    } else {
        parts.origin = url.substr(0, path_begin);
        parts.path_prefix = url.substr(path_begin);
        while (!parts.path_prefix.empty() && parts.path_prefix.back() == '/') {
            parts.path_prefix.pop_back();
        }
    }
    if (parts.origin.size() <= host_begin) throw ConfigError("url \"" + url + "\" lacks a host");
    return parts;
}

}  // namespace ttc

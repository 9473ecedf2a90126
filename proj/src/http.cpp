#include "mdgen/http.hpp"

#include <cmath>

#include <httplib.h>

#include "mdgen/error.hpp"

namespace mdgen {

std::string http_post_json(const std::string& url, const std::string& body, const HttpHeaders& headers,
                           double timeout_seconds) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw TransportError("URL lacks a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    const std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

    httplib::Client client(origin);
    if (!client.is_valid()) throw TransportError("unsupported endpoint: " + origin);
    const auto secs = static_cast<time_t>(std::floor(timeout_seconds));
    const auto usecs = static_cast<time_t>((timeout_seconds - std::floor(timeout_seconds)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);

    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(path, h, body, "application/json");
    if (!res) throw TransportError("request to " + url + " failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300) {
        throw TransportError("request to " + url + " returned HTTP " + std::to_string(res->status));
    }
    return res->body;
}

}  // namespace mdgen

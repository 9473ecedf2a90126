#pragma once

#include <string>
#include <utility>
#include <vector>

namespace mdgen {

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

/// POSTs a JSON body to `url` (http:// or https://) and returns the response
/// body. Throws TransportError on connection failure or a non-2xx status.
std::string http_post_json(const std::string& url, const std::string& body, const HttpHeaders& headers,
                           double timeout_seconds);

}  // namespace mdgen

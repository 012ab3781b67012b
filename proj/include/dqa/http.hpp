#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <string>

namespace dqa::http {

struct reply {
    int status = 0;  ///< 0 means the request never produced a response
    std::string body;
    std::string error;  ///< transport error description when status == 0
};

using headers = std::map<std::string, std::string>;

/// POST a JSON body. Pluggable so tests can substitute an in-process fake.
using post_fn = std::function<reply(const std::string& url, const std::string& body,
                                    const headers& extra, std::chrono::milliseconds timeout)>;

/// cpp-httplib backed implementation; supports http:// and https:// URLs.
reply post_json(const std::string& url, const std::string& body, const headers& extra,
                std::chrono::milliseconds timeout);

/// Splits "scheme://host[:port]/path" into ("scheme://host[:port]", "/path").
std::pair<std::string, std::string> split_url(const std::string& url);

}  // namespace dqa::http

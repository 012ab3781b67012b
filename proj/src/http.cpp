#include "dqa/http.hpp"

#include <httplib.h>

namespace dqa::http {

std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    const auto host_begin = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_begin = url.find('/', host_begin);
    if (path_begin == std::string::npos) return {url, "/"};
    return {url.substr(0, path_begin), url.substr(path_begin)};
}

reply post_json(const std::string& url, const std::string& body, const headers& extra,
                std::chrono::milliseconds timeout) {
    const auto [base, path] = split_url(url);
    httplib::Client client(base);
    const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(timeout - seconds);
    client.set_connection_timeout(seconds.count(), micros.count());
    client.set_read_timeout(seconds.count(), micros.count());
    client.set_write_timeout(seconds.count(), micros.count());

    httplib::Headers hs;
    for (const auto& [k, v] : extra) hs.emplace(k, v);

    auto res = client.Post(path, hs, body, "application/json");
    if (!res) return {0, {}, httplib::to_string(res.error())};
    return {res->status, res->body, {}};
}

}  // namespace dqa::http

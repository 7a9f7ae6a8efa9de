#include "plurinet/http.hpp"

#include <httplib.h>

namespace plurinet::http {

namespace {

httplib::Client make_client(const Endpoint& ep) {
    httplib::Client cli(ep.origin);
    cli.set_connection_timeout(2, 0);
    cli.set_read_timeout(30, 0);
    cli.set_write_timeout(30, 0);
    return cli;
}

httplib::Headers to_headers(const std::map<std::string, std::string>& headers) {
    httplib::Headers out;
    for (const auto& [k, v] : headers) out.emplace(k, v);
    return out;
}

std::optional<Response> convert(const httplib::Result& res) {
    if (!res) return std::nullopt;
    return Response{res->status, res->body, res->get_header_value("Content-Type")};
}

} // namespace

std::optional<Endpoint> Endpoint::parse(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) return std::nullopt;
    auto scheme = url.substr(0, scheme_end);
    if (scheme != "http") return std::nullopt;
    auto path_start = url.find('/', scheme_end + 3);
    Endpoint ep;
    ep.origin = url.substr(0, path_start);
    if (path_start != std::string::npos) ep.prefix = url.substr(path_start);
    while (!ep.prefix.empty() && ep.prefix.back() == '/') ep.prefix.pop_back();
    if (ep.origin.size() <= scheme_end + 3) return std::nullopt;
    return ep;
}

std::optional<Response> get(const Endpoint& ep, const std::string& path,
                            const std::map<std::string, std::string>& headers) {
    auto cli = make_client(ep);
    return convert(cli.Get(ep.prefix + path, to_headers(headers)));
}

std::optional<Response> post(const Endpoint& ep, const std::string& path, const std::string& body,
                             const std::string& content_type,
                             const std::map<std::string, std::string>& headers) {
    auto cli = make_client(ep);
    return convert(cli.Post(ep.prefix + path, to_headers(headers), body, content_type));
}

std::string url_encode(const std::string& value) {
    return httplib::detail::encode_query_param(value);
}

} // namespace plurinet::http

#pragma once

#include <map>
#include <optional>
#include <string>

namespace plurinet::http {

struct Response {
    int status = 0;
    std::string body;
    std::string content_type;
};

/// Splits `http://host:port/prefix` into its origin and path prefix.
struct Endpoint {
    std::string origin; // scheme://host:port
    std::string prefix; // path without trailing slash, may be empty

    static std::optional<Endpoint> parse(const std::string& url);
};

/// Blocking requests. Return nullopt when the peer is unreachable.
std::optional<Response> get(const Endpoint& ep, const std::string& path,
                            const std::map<std::string, std::string>& headers = {});
std::optional<Response> post(const Endpoint& ep, const std::string& path, const std::string& body,
                             const std::string& content_type,
                             const std::map<std::string, std::string>& headers = {});

std::string url_encode(const std::string& value);

} // namespace plurinet::http

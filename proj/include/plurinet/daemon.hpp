#pragma once

// The node HTTP API. Peers, remote blob stores and the web UI all talk to
// this one surface. Reads are public; /admin/ and /import need the bearer
// token when the config sets admin_token.

#include <iosfwd>
#include <memory>
#include <string>

#include "plurinet/node.hpp"

namespace plurinet {

class Daemon {
public:
    explicit Daemon(Node& node);
    ~Daemon();

    Daemon(const Daemon&) = delete;
    Daemon& operator=(const Daemon&) = delete;

    /// Port 0 picks a free port. Returns the bound port; throws IoFailure
    /// when the address is busy.
    int bind(const std::string& host, int port);
    /// Serves on a background thread until stop().
    void start();
    /// Serves on the calling thread until stop().
    void run();
    /// Stops accepting, waits for in-flight requests.
    void stop();
    int port() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Splits `host:port`; throws ConfigError.
std::pair<std::string, int> parse_listen_addr(const std::string& addr);

/// Opens the node and serves until SIGINT or SIGTERM. Startup failures
/// (corrupt data_dir, busy port) throw.
void serve(const NodeConfig& config, std::ostream& log);

} // namespace plurinet

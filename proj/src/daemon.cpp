#include "plurinet/daemon.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <ostream>
#include <thread>

#include <httplib.h>

#include "plurinet/service.hpp"

namespace plurinet {

namespace {

constexpr const char* kJson = "application/json";

void send_json(httplib::Response& res, const Json& body, int status = 200) {
    res.status = status;
    res.set_content(render_json(body) + "\n", kJson);
}

void send_error(httplib::Response& res, const Error& e) {
    send_json(res, error_body(e), error_http_status(e.code()));
}

std::optional<std::string> param(const httplib::Request& req, const char* key) {
    if (!req.has_param(key)) return std::nullopt;
    return req.get_param_value(key);
}

std::optional<std::int64_t> int_param(const httplib::Request& req, const char* key) {
    auto v = param(req, key);
    if (!v) return std::nullopt;
    try {
        std::size_t used = 0;
        auto n = std::stoll(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing");
        return n;
    } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidArgument, std::string("query parameter '") + key + "' must be an integer");
    }
}

StreamId stream_arg(const std::string& text) {
    auto id = StreamId::from_hex(text);
    if (!id) throw Error(ErrorCode::InvalidArgument, "bad stream id '" + text + "'");
    return *id;
}

Digest digest_arg(const std::string& text) {
    auto d = Digest::from_hex(text);
    if (!d) throw Error(ErrorCode::InvalidArgument, "bad hash '" + text + "'");
    return *d;
}

Digest principal_arg(const std::string& text) {
    if (auto id = Principal::parse_encoded_id(text)) return *id;
    if (auto p = Principal::from_public_key_hex(text)) return p->id();
    throw Error(ErrorCode::InvalidArgument, "bad principal '" + text + "'");
}

FeedOptions feed_options(const httplib::Request& req) {
    FeedOptions o;
    if (auto s = param(req, "sort")) {
        if (*s == "score") {
            o.sort = FeedSort::Score;
        } else if (*s != "chronological") {
            throw Error(ErrorCode::InvalidArgument, "sort must be chronological or score");
        }
    }
    o.now = int_param(req, "now");
    return o;
}

SubscriptionSet reader_subs(Node& node, const httplib::Request& req) {
    std::optional<Digest> as;
    if (auto a = param(req, "as")) as = principal_arg(*a);
    auto subs = subscriptions_for(node, as);
    if (auto d = param(req, "disable")) {
        for (const auto& id : parse_stream_list(*d)) subs.disabled_defaults.insert(id);
    }
    return subs;
}

bool token_matches(const std::string& given, const std::string& expected) {
    if (given.size() != expected.size()) return false;
    unsigned char diff = 0;
    for (std::size_t i = 0; i < given.size(); ++i) diff |= static_cast<unsigned char>(given[i] ^ expected[i]);
    return diff == 0;
}

std::vector<ContentEntry> entries_from_body(const Json& j) {
    std::vector<ContentEntry> out;
    if (j.is_object() && j.contains("entries")) {
        const auto& arr = j.at("entries");
        if (!arr.is_array()) throw Error(ErrorCode::InvalidArgument, "'entries' must be an array");
        for (const auto& e : arr) out.push_back(ContentEntry::from_json(e));
    } else {
        out.push_back(ContentEntry::from_json(j));
    }
    return out;
}

} // namespace

struct Daemon::Impl {
    Node& node;
    httplib::Server server;
    std::thread thread;
    int port = 0;

    explicit Impl(Node& n) : node(n) { routes(); }

    using Fn = std::function<void(const httplib::Request&, httplib::Response&)>;

    httplib::Server::Handler guarded(Fn fn, bool admin = false) {
        return [this, fn = std::move(fn), admin](const httplib::Request& req, httplib::Response& res) {
            try {
                if (admin && node.config().admin_token) {
                    auto auth = req.get_header_value("Authorization");
                    if (!token_matches(auth, "Bearer " + *node.config().admin_token)) {
                        throw Error(ErrorCode::Unauthorized, "admin token required");
                    }
                }
                fn(req, res);
            } catch (const Error& e) {
                send_error(res, e);
            } catch (const nlohmann::json::exception& e) {
                send_error(res, Error(ErrorCode::InvalidArgument, e.what()));
            } catch (const std::exception& e) {
                send_error(res, Error(ErrorCode::IoFailure, e.what()));
            }
        };
    }

    void routes() {
        auto& s = server;
        s.set_socket_options([](socket_t sock) {
            int yes = 1;
            ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
        });
        s.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
            res.set_header("Access-Control-Allow-Origin", "*");
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type, Authorization");
        });
        s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
            if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
            auto code = res.status == 404 ? ErrorCode::NotFound : ErrorCode::InvalidArgument;
            auto status = res.status;
            send_json(res, error_body(Error(code, "no route for " + req.method + " " + req.path)), status);
            return httplib::Server::HandlerResponse::Handled;
        });
        s.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

        s.Get("/health", guarded([this](const auto&, auto& res) { send_json(res, health(node)); }));

        s.Get("/streams", guarded([this](const auto&, auto& res) { send_json(res, list_streams(node)); }));
        s.Post("/streams", guarded([this](const auto& req, auto& res) {
            auto j = parse_json(req.body);
            auto out = publish_genesis(node, GenesisRecord::from_json(j.contains("genesis") ? j.at("genesis") : j));
            send_json(res, out, out.at("created") == true ? 201 : 200);
        }));
        s.Get(R"(/streams/([^/]+))", guarded([this](const auto& req, auto& res) {
            auto id = stream_arg(req.matches[1]);
            auto st = node.streams().get(id);
            if (!st) throw Error(ErrorCode::NotFound, "no stream " + id.hex());
            auto j = stream_summary(*st);
            j["genesis"] = st->genesis.to_json();
            send_json(res, j);
        }));
        s.Get(R"(/streams/([^/]+)/entries)", guarded([this](const auto& req, auto& res) {
            SyncMessage q;
            q.kind = SyncMessage::Kind::EntriesRequest;
            q.stream_id = stream_arg(req.matches[1]);
            auto st = node.streams().get(*q.stream_id);
            if (!st) throw Error(ErrorCode::NotFound, "no stream " + q.stream_id->hex());
            auto from = int_param(req, "from").value_or(1);
            auto to = int_param(req, "to").value_or(static_cast<std::int64_t>(st->head_seq()));
            if (from < 0 || to < 0) throw Error(ErrorCode::InvalidArgument, "from and to must be non-negative");
            q.from_seq = static_cast<std::uint64_t>(from);
            q.to_seq = static_cast<std::uint64_t>(to);
            send_json(res, answer(node.streams(), node.key(), q).to_json());
        }));
        s.Post(R"(/streams/([^/]+)/entries)", guarded([this](const auto& req, auto& res) {
            auto id = stream_arg(req.matches[1]);
            send_json(res, publish_entries(node, id, entries_from_body(parse_json(req.body))));
        }));

        s.Get(R"(/blobs/([^/]+))", guarded([this](const auto& req, auto& res) {
            auto hash = digest_arg(req.matches[1]);
            for (const auto& store : node.stores().all()) {
                if (store->backend() == StoreBackend::Remote || !store->online()) continue;
                if (auto b = store->get(hash)) {
                    res.set_content(std::string(b->bytes.begin(), b->bytes.end()), "application/octet-stream");
                    return;
                }
            }
            if (node.primary_store()->is_refused(hash, {})) {
                throw Error(ErrorCode::Refused, "blob " + hash.hex() + " is refused here");
            }
            throw Error(ErrorCode::NotFound, "no blob " + hash.hex());
        }));
        s.Post("/blobs", guarded([this](const auto& req, auto& res) {
            Attribution attr;
            if (auto v = param(req, "stream")) attr.stream = stream_arg(*v);
            if (auto v = param(req, "author")) attr.author = principal_arg(*v);
            send_json(res, upload_blob(node, as_bytes(req.body), attr, unix_now()));
        }));

        s.Get("/sync/heads", guarded([this](const auto&, auto& res) {
            SyncMessage q;
            q.kind = SyncMessage::Kind::HeadRequest;
            send_json(res, answer(node.streams(), node.key(), q).to_json());
        }));
        s.Get(R"(/sync/head/([^/]+))", guarded([this](const auto& req, auto& res) {
            SyncMessage q;
            q.kind = SyncMessage::Kind::HeadRequest;
            q.stream_id = stream_arg(req.matches[1]);
            if (!node.streams().contains(*q.stream_id)) throw Error(ErrorCode::NotFound, "no stream " + q.stream_id->hex());
            send_json(res, answer(node.streams(), node.key(), q).to_json());
        }));
        s.Post("/sync/entries", guarded([this](const auto& req, auto& res) {
            send_json(res, accept_sync(node, SyncMessage::from_json(parse_json(req.body))));
        }));

        s.Get(R"(/feeds/forum/([^/]+))", guarded([this](const auto& req, auto& res) {
            auto forum = forum_config(node, req.matches[1]);
            send_json(res, forum_feed(node, forum, reader_subs(node, req), feed_options(req)).to_json());
        }));
        s.Get("/feeds/follow", guarded([this](const auto& req, auto& res) {
            SubscriptionSet subs;
            if (auto j = param(req, "subs")) {
                subs = SubscriptionSet::from_json(parse_json(*j));
            } else {
                if (auto a = param(req, "as")) subs = subscriptions_for(node, principal_arg(*a));
                if (auto f = param(req, "follow")) {
                    for (const auto& id : parse_stream_list(*f)) subs.follows.insert(id);
                }
                if (auto m = param(req, "mute")) {
                    for (const auto& id : parse_stream_list(*m)) subs.muted.insert(id);
                }
            }
            send_json(res, follow_feed(node, subs, feed_options(req)).to_json());
        }));
        s.Get("/feeds/diff", guarded([this](const auto& req, auto& res) {
            auto forum_id = param(req, "forum");
            if (!forum_id) throw Error(ErrorCode::InvalidArgument, "missing 'forum'");
            if (auto against = param(req, "against"); against && *against != "raw") {
                throw Error(ErrorCode::InvalidArgument, "only against=raw is supported");
            }
            send_json(res, forum_diff(node, forum_config(node, *forum_id), reader_subs(node, req), feed_options(req)));
        }));

        s.Get("/moderators/rank", guarded([this](const auto& req, auto& res) {
            auto c = param(req, "candidates");
            if (!c) throw Error(ErrorCode::InvalidArgument, "missing 'candidates'");
            std::optional<StreamId> history;
            if (auto h = param(req, "history")) history = stream_arg(*h);
            auto now = int_param(req, "now").value_or(unix_now());
            send_json(res, rank(node, parse_stream_list(*c), history, now).to_json());
        }));
        s.Get("/mod/compare", guarded([this](const auto& req, auto& res) {
            auto a = param(req, "a");
            auto b = param(req, "b");
            if (!a || !b) throw Error(ErrorCode::InvalidArgument, "missing 'a' or 'b'");
            std::vector<StreamId> content;
            if (auto c = param(req, "content")) content = parse_stream_list(*c);
            send_json(res, compare(node, stream_arg(*a), stream_arg(*b), content).to_json());
        }));

        s.Post("/admin/refuse", guarded([this](const auto& req, auto& res) {
            auto j = parse_json(req.body);
            auto t = RefusalTarget::parse(require_string(j, "target"));
            if (!t) throw Error(ErrorCode::InvalidArgument, "bad refusal target");
            auto store = j.contains("store") ? require_string(j, "store") : node.primary_store()->id();
            send_json(res, refuse(node, store, *t));
        }, true));
        s.Post("/admin/switch-provider", guarded([this](const auto& req, auto& res) {
            auto j = parse_json(req.body);
            auto now = j.contains("issued_at") ? require_int(j, "issued_at") : unix_now();
            auto report = switch_provider_op(node, stream_arg(require_string(j, "stream")), require_string(j, "from"),
                                             require_string(j, "to"), now);
            send_json(res, report.to_json());
        }, true));
        s.Post("/admin/gc", guarded([this](const auto&, auto& res) { send_json(res, gc(node)); }, true));
        s.Post("/admin/stores", guarded([this](const auto& req, auto& res) {
            send_json(res, add_store(node, BlobStoreConfig::from_json(parse_json(req.body))));
        }, true));

        s.Get("/export", guarded([this](const auto& req, auto& res) {
            ExportOptions opts;
            if (auto v = param(req, "streams")) opts.streams = parse_stream_list(*v);
            send_json(res, bundle_to_json(export_bundle(node, opts)));
        }));
        s.Post("/import", guarded([this](const auto& req, auto& res) {
            auto report = import_bundle(node, bundle_from_json(parse_json(req.body)));
            send_json(res, report.to_json());
        }, true));
    }
};

Daemon::Daemon(Node& node) : impl_(std::make_unique<Impl>(node)) {}

Daemon::~Daemon() { stop(); }

int Daemon::bind(const std::string& host, int port) {
    int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(ErrorCode::IoFailure, "cannot listen on " + host + ":" + std::to_string(port));
    impl_->port = bound;
    return bound;
}

void Daemon::start() {
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void Daemon::run() { impl_->server.listen_after_bind(); }

void Daemon::stop() {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

int Daemon::port() const { return impl_->port; }

std::pair<std::string, int> parse_listen_addr(const std::string& addr) {
    auto colon = addr.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::ConfigError, "listen address must be host:port");
    try {
        std::size_t used = 0;
        auto port = std::stoi(addr.substr(colon + 1), &used);
        if (used != addr.size() - colon - 1 || port < 0 || port > 65535) throw std::out_of_range("port");
        return {addr.substr(0, colon), port};
    } catch (const std::exception&) {
        throw Error(ErrorCode::ConfigError, "bad port in listen address '" + addr + "'");
    }
}

namespace {
std::atomic<bool> g_stop{false};
extern "C" void on_stop_signal(int) { g_stop = true; }
} // namespace

void serve(const NodeConfig& config, std::ostream& log) {
    auto [host, port] = parse_listen_addr(config.listen_addr);
    Node node(config);
    for (const auto& id : node.streams().recovery().truncated) {
        log << "recovered " << id.hex() << ": dropped torn final line\n";
    }
    Daemon daemon(node);
    int bound = daemon.bind(host, port);
    g_stop = false;
    std::signal(SIGINT, on_stop_signal);
    std::signal(SIGTERM, on_stop_signal);
    daemon.start();
    log << "plurinet node " << node.key().principal().encoded() << " listening on " << host << ":" << bound
        << std::endl;
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    daemon.stop();
    log << "stopped" << std::endl;
}

} // namespace plurinet

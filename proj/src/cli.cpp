#include "plurinet/cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "plurinet/daemon.hpp"
#include "plurinet/service.hpp"
#include "plurinet/simulator.hpp"

namespace plurinet {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(ErrorCode::NotFound, "cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

StreamId stream_arg(std::string text) {
    if (text.rfind("stream:", 0) == 0) text = text.substr(7);
    auto id = StreamId::from_hex(text);
    if (!id) throw Error(ErrorCode::InvalidArgument, "bad stream id '" + text + "'");
    return *id;
}

std::vector<StreamId> stream_args(const std::vector<std::string>& texts) {
    std::vector<StreamId> out;
    for (const auto& t : texts) {
        for (const auto& id : parse_stream_list(t)) out.push_back(id);
    }
    return out;
}

Digest principal_arg(const std::string& text) {
    if (auto id = Principal::parse_encoded_id(text)) return *id;
    if (auto p = Principal::from_public_key_hex(text)) return p->id();
    throw Error(ErrorCode::InvalidArgument, "bad principal '" + text + "'");
}

std::optional<StreamKind> kind_arg(std::string text) {
    for (auto& c : text) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return parse_stream_kind(text);
}

std::optional<PayloadKind> payload_kind_arg(std::string text) {
    for (auto& c : text) c = static_cast<char>(c == '-' ? '_' : std::toupper(static_cast<unsigned char>(c)));
    return parse_payload_kind(text);
}

// Tolerant of malformed lines: the first one that does not parse counts as
// the first bad entry.
Json verify_csl_text(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t pos = 0;
    bool torn = false;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string::npos) {
            lines.push_back(text.substr(pos));
            torn = true;
            break;
        }
        lines.push_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    if (lines.empty()) throw Error(ErrorCode::InvalidArgument, "empty stream file");
    GenesisRecord genesis;
    try {
        genesis = GenesisRecord::from_json(parse_json(lines[0]));
    } catch (const Error& e) {
        return {{"ok", false}, {"first_bad_seq", 0}, {"reasons", {"BAD_RECORD"}}, {"entries", 0},
                {"message", std::string("genesis: ") + e.what()}};
    }
    std::vector<ContentEntry> entries;
    std::optional<std::uint64_t> malformed_at;
    bool truncated = false;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        try {
            entries.push_back(ContentEntry::from_json(parse_json(lines[i])));
        } catch (const Error&) {
            if (torn && i + 1 == lines.size()) {
                truncated = true;
            } else {
                malformed_at = i;
            }
            break;
        }
    }
    auto report = verify_stream(genesis, entries);
    Json reasons = Json::array();
    for (auto r : report.reasons) reasons.push_back(std::string(to_string(r)));
    std::optional<std::uint64_t> first_bad = report.first_bad_seq;
    if (malformed_at && (!first_bad || *malformed_at <= *first_bad)) {
        first_bad = malformed_at;
        reasons.push_back("BAD_RECORD");
    }
    Json j{{"ok", report.ok && !malformed_at},
           {"entries", entries.size()},
           {"first_bad_seq", first_bad ? Json(*first_bad) : Json(nullptr)},
           {"reasons", reasons},
           {"stream", genesis.stream_id.hex()},
           {"truncated_tail", truncated}};
    return j;
}

struct Forum {
    std::string id;
    std::vector<std::string> content;
    std::vector<std::string> moderators;
    std::vector<std::string> authority;
    std::optional<std::string> as;
    std::vector<std::string> disable;
    std::string sort = "chronological";
    std::optional<std::int64_t> now;
};

class Cli {
public:
    Cli(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

    int run(int argc, const char* const* argv);

private:
    Node& node() {
        if (!node_) node_ = std::make_unique<Node>(resolve_node_config(config_path(), data_dir()));
        return *node_;
    }
    std::optional<fs::path> config_path() const {
        if (config_.empty()) return std::nullopt;
        return fs::path(config_);
    }
    std::optional<fs::path> data_dir() const {
        if (data_dir_.empty()) return std::nullopt;
        return fs::path(data_dir_);
    }

    void print(const Json& j) {
        if (json_) {
            out_ << render_json(j) << '\n';
        } else {
            out_ << j.dump(2) << '\n';
        }
    }

    FeedOptions feed_options(const Forum& f) const {
        FeedOptions o;
        if (f.sort == "score") {
            o.sort = FeedSort::Score;
        } else if (f.sort != "chronological") {
            throw Error(ErrorCode::InvalidArgument, "sort must be chronological or score");
        }
        o.now = f.now;
        return o;
    }

    ForumConfig forum_of(const Forum& f) {
        if (f.content.empty()) return forum_config(node(), f.id);
        ForumConfig c;
        c.forum_id = f.id;
        c.content_streams = stream_args(f.content);
        c.moderator_streams = stream_args(f.moderators);
        for (const auto& a : f.authority) {
            auto text = a;
            bool locked = false;
            if (text.size() > 7 && text.substr(text.size() - 7) == ":locked") {
                locked = true;
                text.resize(text.size() - 7);
            }
            c.authority_streams.push_back({stream_arg(text), locked});
        }
        return c;
    }

    SubscriptionSet subs_of(const Forum& f) {
        std::optional<Digest> as;
        if (f.as) as = principal_arg(*f.as);
        auto subs = subscriptions_for(node(), as);
        for (const auto& id : stream_args(f.disable)) subs.disabled_defaults.insert(id);
        return subs;
    }

    std::ostream& out_;
    std::ostream& err_;
    std::string data_dir_;
    std::string config_;
    bool json_ = false;
    std::unique_ptr<Node> node_;
};

void add_forum_options(CLI::App* cmd, Forum& f, bool positional) {
    if (positional) {
        cmd->add_option("forum", f.id, "Forum id from the node config")->required();
    } else {
        cmd->add_option("--forum", f.id, "Forum id from the node config")->required();
    }
    cmd->add_option("--content", f.content, "Ad-hoc forum: content stream ids");
    cmd->add_option("--moderator", f.moderators, "Ad-hoc forum: moderator stream ids");
    cmd->add_option("--authority", f.authority, "Ad-hoc forum: authority stream id, suffix :locked to lock");
    cmd->add_option("--as", f.as, "Reader principal");
    cmd->add_option("--disable", f.disable, "Unlocked default streams to skip");
    cmd->add_option("--sort", f.sort, "chronological or score");
    cmd->add_option("--now", f.now, "Fixed generation time");
}

int Cli::run(int argc, const char* const* argv) {
    CLI::App app{"plurinet: signed content streams, pluggable storage and user-published moderation", "plurinet"};
    app.require_subcommand(1);
    app.add_option("--data-dir", data_dir_, "Node data directory (default $PLURINET_DATA_DIR)");
    app.add_option("--config", config_, "Node config file (default $PLURINET_CONFIG)");
    app.add_flag("--json", json_, "Canonical single-line JSON output");

    // keygen
    auto* keygen = app.add_subcommand("keygen", "Generate an Ed25519 identity");
    std::string seed_hex, key_out;
    keygen->add_option("--seed", seed_hex, "32-byte seed in hex");
    keygen->add_option("--out", key_out, "Write the key file here");

    // stream
    auto* stream = app.add_subcommand("stream", "Create, append, read and verify streams");
    stream->require_subcommand(1);
    std::string key_file, name, kind = "content", scope, stream_id, text, file, body, reply_to, payload_kind = "post";
    std::vector<std::string> writers;
    std::optional<std::int64_t> created_at, timestamp;
    std::optional<std::uint64_t> target_seq;
    auto* s_create = stream->add_subcommand("create", "Create a stream and store its genesis");
    s_create->add_option("--key", key_file, "Owner key file")->required();
    s_create->add_option("--name", name, "Stream name")->required();
    s_create->add_option("--kind", kind, "content or moderation");
    s_create->add_option("--writer", writers, "Extra writer public keys (hex)");
    s_create->add_option("--scope", scope, "Content stream a moderation stream annotates");
    s_create->add_option("--created-at", created_at, "Genesis timestamp");

    auto* s_append = stream->add_subcommand("append", "Sign and append an entry");
    s_append->add_option("--key", key_file, "Author key file")->required();
    s_append->add_option("--stream", stream_id, "Stream id")->required();
    auto* text_opt = s_append->add_option("--text", text, "Payload text");
    auto* file_opt = s_append->add_option("--file", file, "Payload file");
    auto* body_opt = s_append->add_option("--body", body, "Inline JSON payload for structured kinds");
    text_opt->excludes(file_opt)->excludes(body_opt);
    file_opt->excludes(body_opt);
    s_append->add_option("--kind", payload_kind, "post, reply, edit, tombstone or writer_update");
    s_append->add_option("--reply-to", reply_to, "ref:<stream>:<seq>");
    s_append->add_option("--target-seq", target_seq, "Tombstone target");
    s_append->add_option("--timestamp", timestamp, "Entry timestamp");

    std::string target_arg;
    std::optional<std::uint64_t> from_seq, to_seq;
    bool csl_out = false;
    auto* s_cat = stream->add_subcommand("cat", "Print a stored stream or a .csl file");
    s_cat->add_option("stream", target_arg, "Stream id or .csl path")->required();
    s_cat->add_option("--from", from_seq, "First seq");
    s_cat->add_option("--to", to_seq, "Last seq");
    s_cat->add_flag("--csl", csl_out, "Print the .csl text");

    auto* s_verify = stream->add_subcommand("verify", "Verify a .csl file or stored stream");
    s_verify->add_option("stream", target_arg, "Stream id or .csl path")->required();

    // mod
    auto* mod = app.add_subcommand("mod", "Publish moderation actions and compare moderators");
    mod->require_subcommand(1);
    std::string mod_target, label, reason;
    std::optional<int> score;
    std::vector<std::pair<CLI::App*, Verb>> verbs;
    for (auto [verb_name, verb] : {std::pair{"allow", Verb::Allow}, std::pair{"deny", Verb::Deny},
                                   std::pair{"label", Verb::Label}, std::pair{"score", Verb::Score},
                                   std::pair{"include", Verb::IncludeStream},
                                   std::pair{"exclude", Verb::ExcludeStream}}) {
        auto* c = mod->add_subcommand(verb_name, std::string("Append a ") + std::string(to_string(verb)) + " action");
        c->add_option("--key", key_file, "Author key file")->required();
        c->add_option("--stream", stream_id, "Moderation stream id")->required();
        c->add_option("--target", mod_target, "ref:<stream>:<seq>, sha256:<hash>, ed25519:<id> or stream:<id>")
            ->required();
        if (verb == Verb::Label) c->add_option("--label", label, "Label text")->required();
        if (verb == Verb::Score) c->add_option("--score", score, "Score value")->required();
        c->add_option("--reason", reason, "Reason");
        c->add_option("--timestamp", timestamp, "Entry timestamp");
        verbs.emplace_back(c, verb);
    }
    std::string cmp_a, cmp_b;
    std::vector<std::string> cmp_content;
    auto* m_compare = mod->add_subcommand("compare", "Compare two moderation streams");
    m_compare->add_option("--a", cmp_a, "First moderation stream")->required();
    m_compare->add_option("--b", cmp_b, "Second moderation stream")->required();
    m_compare->add_option("--content", cmp_content, "Content streams (default all)");

    // feed
    auto* feed = app.add_subcommand("feed", "Assemble feeds");
    feed->require_subcommand(1);
    Forum forum_args, diff_args;
    auto* f_forum = feed->add_subcommand("forum", "Forum feed (deny list)");
    add_forum_options(f_forum, forum_args, true);
    auto* f_diff = feed->add_subcommand("diff", "What moderation hides from a forum");
    add_forum_options(f_diff, diff_args, false);
    std::string against = "raw";
    f_diff->add_option("--against", against, "Only raw is supported");
    std::vector<std::string> follows, mutes;
    std::string subs_file;
    std::optional<std::string> follow_as;
    std::optional<std::int64_t> follow_now;
    auto* f_follow = feed->add_subcommand("follow", "Follow feed (allow list)");
    f_follow->add_option("--follow", follows, "Followed moderation streams");
    f_follow->add_option("--mute", mutes, "Muted streams");
    f_follow->add_option("--subs", subs_file, "Subscription set JSON file");
    f_follow->add_option("--as", follow_as, "Use the stored subscriptions of this principal");
    f_follow->add_option("--now", follow_now, "Fixed generation time");

    std::vector<std::string> rank_candidates;
    std::string rank_history;
    auto* f_rank = feed->add_subcommand("rank", "Rank moderation streams for a reader");
    f_rank->add_option("--candidates", rank_candidates, "Candidate moderation streams")->required();
    f_rank->add_option("--history", rank_history, "The reader's own moderation stream");
    f_rank->add_option("--now", follow_now, "Reference time");

    // store
    auto* store = app.add_subcommand("store", "Blob stores");
    store->require_subcommand(1);
    std::string blob_file, attr_stream, attr_author, store_id, backend, location;
    auto* st_add = store->add_subcommand("add", "Put a blob (--file) or register a store (--id)");
    auto* blob_opt = st_add->add_option("--file", blob_file, "Blob to put into the primary store");
    st_add->add_option("--stream", attr_stream, "Attribute the blob to a stream");
    st_add->add_option("--author", attr_author, "Attribute the blob to a principal");
    auto* id_opt = st_add->add_option("--id", store_id, "New store id");
    st_add->add_option("--backend", backend, "memory, filesystem or remote");
    st_add->add_option("--location", location, "Directory or base URL");
    blob_opt->excludes(id_opt);
    std::string refuse_target;
    auto* st_refuse = store->add_subcommand("refuse", "Refuse a hash, stream or principal");
    st_refuse->add_option("--target", refuse_target, "sha256:<hash>, stream:<id> or ed25519:<id>")->required();
    st_refuse->add_option("--store", store_id, "Store id (default primary)");
    auto* st_gc = store->add_subcommand("gc", "Remove unreferenced blobs from the primary store");

    // sync
    auto* sync = app.add_subcommand("sync", "Pull from peers");
    sync->require_subcommand(1);
    std::vector<std::string> peer_urls;
    auto* sy_once = sync->add_subcommand("once", "Pull from one peer");
    sy_once->add_option("--peer", peer_urls, "Peer base URL")->required()->expected(1);
    sy_once->add_option("--stream", stream_id, "Only this stream");
    int rounds = 1;
    auto* sy_gossip = sync->add_subcommand("gossip", "Anti-entropy rounds over configured peers");
    sy_gossip->add_option("--peer", peer_urls, "Extra peer base URLs");
    sy_gossip->add_option("--rounds", rounds, "Number of rounds")->check(CLI::PositiveNumber);

    // migration
    std::string bundle_dir;
    std::vector<std::string> export_streams;
    bool include_keys = false;
    auto* exp = app.add_subcommand("export", "Write a verifiable bundle");
    exp->add_option("--out", bundle_dir, "Bundle directory")->required();
    exp->add_option("--stream", export_streams, "Streams to export (default all)");
    exp->add_flag("--include-keys", include_keys, "Include the node key");
    auto* imp = app.add_subcommand("import", "Verify and import a bundle");
    imp->add_option("bundle", bundle_dir, "Bundle directory")->required();
    std::string sw_from, sw_to;
    std::optional<std::int64_t> sw_now;
    auto* sw = app.add_subcommand("switch-provider", "Move a stream's blobs to another store");
    sw->add_option("--stream", stream_id, "Stream id")->required();
    sw->add_option("--from", sw_from, "Old store id")->required();
    sw->add_option("--to", sw_to, "New store id")->required();
    sw->add_option("--now", sw_now, "Hint issue time");

    std::string listen;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP daemon");
    serve_cmd->add_option("--listen", listen, "host:port (overrides listen_addr)");

    std::string scenario;
    bool trace = false;
    auto* sim = app.add_subcommand("simulate", "Run a sync scenario in the deterministic simulator");
    sim->add_option("scenario", scenario, "Scenario JSON file")->required();
    sim->add_flag("--trace", trace, "Print the event trace instead of the summary");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out_ << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out_ << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err_ << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (keygen->parsed()) {
            Keypair kp = generate_keypair();
            if (!seed_hex.empty()) {
                auto seed = from_hex(seed_hex);
                if (!seed || seed->size() != 32) throw Error(ErrorCode::InvalidArgument, "seed must be 64 hex digits");
                kp = Keypair::from_seed(*seed);
            }
            Json j{{"principal", kp.principal().encoded()}, {"public_key", kp.principal().public_key_hex()}};
            if (!key_out.empty()) {
                write_keyfile(key_out, kp);
                j["key_file"] = key_out;
            } else {
                j["seed"] = to_hex(kp.secret_seed());
            }
            print(j);
        } else if (s_create->parsed()) {
            auto kp = load_keyfile(key_file);
            auto k = kind_arg(kind);
            if (!k) throw Error(ErrorCode::InvalidArgument, "kind must be content or moderation");
            std::vector<Principal> ws;
            for (const auto& w : writers) {
                auto p = Principal::from_public_key_hex(w);
                if (!p) throw Error(ErrorCode::InvalidArgument, "bad writer key '" + w + "'");
                ws.push_back(*p);
            }
            std::optional<StreamId> sc;
            if (!scope.empty()) sc = stream_arg(scope);
            auto state = create_stream(kp, name, *k, ws, created_at.value_or(unix_now()), sc);
            print(publish_genesis(node(), state.genesis));
        } else if (s_append->parsed()) {
            auto kp = load_keyfile(key_file);
            auto id = stream_arg(stream_id);
            auto pk = payload_kind_arg(payload_kind);
            if (!pk) throw Error(ErrorCode::InvalidArgument, "unknown payload kind '" + payload_kind + "'");
            auto state = node().streams().get(id);
            if (!state) throw Error(ErrorCode::NotFound, "no stream " + id.hex());
            std::string payload;
            if (*pk == PayloadKind::Tombstone && target_seq) {
                payload = canonical_dump(Json{{"target_seq", *target_seq}});
            } else if (!body.empty()) {
                payload = canonical_dump(parse_json(body));
            } else if (!file.empty()) {
                payload = read_file(file);
            } else if (text_opt->count() > 0) {
                payload = text;
            } else {
                throw Error(ErrorCode::InvalidArgument, "one of --text, --file or --body is required");
            }
            AppendOptions opts;
            opts.timestamp = timestamp.value_or(unix_now());
            if (!reply_to.empty()) {
                auto ref = EntryRef::parse(reply_to);
                if (!ref) throw Error(ErrorCode::InvalidArgument, "bad --reply-to '" + reply_to + "'");
                opts.reply_to = *ref;
            }
            auto entry = make_entry(*state, kp, *pk, as_bytes(payload), opts);
            if (!is_inline_kind(*pk)) node().put_blob(as_bytes(payload), Attribution{id, kp.principal().id()});
            auto j = publish_entries(node(), id, {entry});
            j["entry"] = entry.to_json();
            print(j);
        } else if (s_cat->parsed()) {
            StreamState s;
            if (fs::exists(target_arg)) {
                auto c = read_csl_file(target_arg);
                s.genesis = c.genesis;
                s.entries = c.entries;
            } else {
                auto id = stream_arg(target_arg);
                auto held = node().streams().get(id);
                if (!held) throw Error(ErrorCode::NotFound, "no stream " + id.hex());
                s = *held;
            }
            if (csl_out) {
                out_ << to_csl(s);
            } else {
                Json entries = Json::array();
                for (const auto& e : s.entries) {
                    if (from_seq && e.seq < *from_seq) continue;
                    if (to_seq && e.seq > *to_seq) continue;
                    entries.push_back(e.to_json());
                }
                print({{"entries", entries}, {"genesis", s.genesis.to_json()}});
            }
        } else if (s_verify->parsed()) {
            Json report;
            if (fs::exists(target_arg)) {
                report = verify_csl_text(read_file(target_arg));
            } else {
                auto id = stream_arg(target_arg);
                auto held = node().streams().get(id);
                if (!held) throw Error(ErrorCode::NotFound, "no stream " + id.hex());
                report = verify_csl_text(to_csl(*held));
            }
            print(report);
            return report.at("ok") == true ? 0 : 1;
        } else if (m_compare->parsed()) {
            print(compare(node(), stream_arg(cmp_a), stream_arg(cmp_b), stream_args(cmp_content)).to_json());
        } else if (f_forum->parsed()) {
            print(forum_feed(node(), forum_of(forum_args), subs_of(forum_args), feed_options(forum_args)).to_json());
        } else if (f_diff->parsed()) {
            if (against != "raw") throw Error(ErrorCode::InvalidArgument, "only --against raw is supported");
            print(forum_diff(node(), forum_of(diff_args), subs_of(diff_args), feed_options(diff_args)));
        } else if (f_follow->parsed()) {
            SubscriptionSet subs;
            if (!subs_file.empty()) {
                subs = SubscriptionSet::from_json(parse_json(read_file(subs_file)));
            } else if (follow_as) {
                subs = subscriptions_for(node(), principal_arg(*follow_as));
            }
            for (const auto& id : stream_args(follows)) subs.follows.insert(id);
            for (const auto& id : stream_args(mutes)) subs.muted.insert(id);
            FeedOptions o;
            o.now = follow_now;
            print(follow_feed(node(), subs, o).to_json());
        } else if (f_rank->parsed()) {
            std::optional<StreamId> history;
            if (!rank_history.empty()) history = stream_arg(rank_history);
            print(rank(node(), stream_args(rank_candidates), history, follow_now.value_or(unix_now())).to_json());
        } else if (st_add->parsed()) {
            if (!blob_file.empty()) {
                Attribution attr;
                if (!attr_stream.empty()) attr.stream = stream_arg(attr_stream);
                if (!attr_author.empty()) attr.author = principal_arg(attr_author);
                auto bytes = read_file(blob_file);
                print(upload_blob(node(), as_bytes(bytes), attr, unix_now()));
            } else if (!store_id.empty()) {
                auto b = parse_store_backend(backend.empty() ? "FILESYSTEM" : [&] {
                    auto up = backend;
                    for (auto& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
                    return up;
                }());
                if (!b) throw Error(ErrorCode::InvalidArgument, "backend must be memory, filesystem or remote");
                BlobStoreConfig cfg;
                cfg.store_id = store_id;
                cfg.backend = *b;
                cfg.location = location;
                print(add_store(node(), cfg));
            } else {
                err_ << "error: store add needs --file or --id\n\n" << st_add->help();
                return 2;
            }
        } else if (st_refuse->parsed()) {
            auto t = RefusalTarget::parse(refuse_target);
            if (!t) throw Error(ErrorCode::InvalidArgument, "bad refusal target '" + refuse_target + "'");
            print(refuse(node(), store_id.empty() ? node().primary_store()->id() : store_id, *t));
        } else if (st_gc->parsed()) {
            print(gc(node()));
        } else if (sy_once->parsed()) {
            auto peer = connect_peer(PeerAddress{std::nullopt, peer_urls.front()});
            if (!stream_id.empty()) {
                auto r = sync_stream(node().streams(), *peer, stream_arg(stream_id));
                print({{"fork_detected", r.fork_detected}, {"head_seq", r.head_seq}, {"new_entries", r.new_entries}});
            } else {
                print(gossip_round(node().streams(), {peer.get()}).to_json());
            }
        } else if (sy_gossip->parsed()) {
            std::vector<std::unique_ptr<PeerClient>> owned;
            for (const auto& p : node().config().peers) owned.push_back(connect_peer(p));
            for (const auto& u : peer_urls) owned.push_back(connect_peer(PeerAddress{std::nullopt, u}));
            if (owned.empty()) throw Error(ErrorCode::ConfigError, "no peers configured");
            std::vector<PeerClient*> peers;
            for (auto& p : owned) peers.push_back(p.get());
            Json reports = Json::array();
            for (int i = 0; i < rounds; ++i) reports.push_back(gossip_round(node().streams(), peers).to_json());
            print({{"rounds", reports}});
        } else if (exp->parsed()) {
            ExportOptions opts;
            opts.streams = stream_args(export_streams);
            opts.include_keys = include_keys;
            auto b = export_bundle(node(), opts);
            write_bundle(b, bundle_dir);
            print({{"bundle", bundle_dir}, {"manifest", b.manifest.to_json()}, {"warnings", b.warnings}});
        } else if (imp->parsed()) {
            auto report = import_bundle(node(), read_bundle(bundle_dir));
            print(report.to_json());
        } else if (sw->parsed()) {
            print(switch_provider_op(node(), stream_arg(stream_id), sw_from, sw_to, sw_now.value_or(unix_now()))
                      .to_json());
        } else if (serve_cmd->parsed()) {
            auto cfg = resolve_node_config(config_path(), data_dir());
            if (!listen.empty()) cfg.listen_addr = listen;
            serve(cfg, err_);
        } else if (sim->parsed()) {
            auto sc = SimScenario::from_json(parse_json(read_file(scenario)));
            auto r = run_simulation(sc.config, sc.script);
            if (trace) {
                out_ << r.trace_text();
                return 0;
            }
            Json streams = Json::object();
            for (const auto& [label, id] : r.streams) {
                const auto& heads = r.final_heads.front();
                auto it = heads.find(id);
                Json h{{"stream", id.hex()}};
                if (it != heads.end()) {
                    h["head_seq"] = it->second.head_seq;
                    h["head_hash"] = it->second.head_hash.hex();
                    h["forked"] = it->second.forked;
                }
                streams[label] = h;
            }
            auto rounds_needed = r.rounds_to_converge();
            print({{"converged", r.converged_tick.has_value()},
                   {"converged_tick", r.converged_tick ? Json(*r.converged_tick) : Json(nullptr)},
                   {"delivered", r.delivered},
                   {"diameter", sc.config.diameter()},
                   {"dropped", r.dropped},
                   {"last_action_tick", r.last_action_tick},
                   {"rounds_to_converge", rounds_needed ? Json(*rounds_needed) : Json(nullptr)},
                   {"streams", streams},
                   {"trace_digest", sha256(r.trace_text()).hex()},
                   {"trace_events", r.trace.size()}});
        } else {
            for (const auto& [cmd, verb] : verbs) {
                if (!cmd->parsed()) continue;
                auto kp = load_keyfile(key_file);
                auto id = stream_arg(stream_id);
                auto state = node().streams().get(id);
                if (!state) throw Error(ErrorCode::NotFound, "no stream " + id.hex());
                ModAction a;
                a.verb = verb;
                std::optional<Target> t;
                if (verb == Verb::IncludeStream || verb == Verb::ExcludeStream) {
                    t = Target::of(stream_arg(mod_target));
                } else {
                    t = Target::parse(mod_target);
                }
                if (!t) throw Error(ErrorCode::InvalidArgument, "bad target '" + mod_target + "'");
                a.target = *t;
                if (verb == Verb::Label) a.label = label;
                if (verb == Verb::Score) a.score = score;
                if (!reason.empty()) a.reason = reason;
                AppendOptions opts;
                opts.timestamp = timestamp.value_or(unix_now());
                auto appended = append_action(*state, kp, a, opts);
                auto j = publish_entries(node(), id, {appended.entry});
                j["entry"] = appended.entry.to_json();
                print(j);
                return 0;
            }
            err_ << app.help();
            return 2;
        }
    } catch (const Error& e) {
        if (json_) {
            err_ << render_json(error_body(e)) << '\n';
        } else {
            err_ << "error: " << error_code_name(e.code()) << ": " << e.what() << '\n';
        }
        return 1;
    } catch (const std::exception& e) {
        err_ << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

} // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    Cli cli(out, err);
    return cli.run(argc, argv);
}

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"plurinet"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
}

} // namespace plurinet

#include "plurinet/service.hpp"

#include <fstream>
#include <sstream>

#include <sys/stat.h>

namespace plurinet {

Json error_body(const Error& e) {
    return {{"code", std::string(error_code_name(e.code()))},
            {"http_status", error_http_status(e.code())},
            {"message", e.what()}};
}

Json keyfile_json(const Keypair& kp) {
    return {{"public_key", kp.principal().public_key_hex()}, {"seed", to_hex(kp.secret_seed())}};
}

Keypair load_keyfile(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::NotFound, "cannot read key file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        auto j = parse_json(ss.str());
        auto seed = from_hex(require_string(j, "seed"));
        if (!seed) throw Error(ErrorCode::InvalidArgument, "seed is not hex");
        auto kp = Keypair::from_seed(*seed);
        if (j.contains("public_key") && j.at("public_key") != kp.principal().public_key_hex()) {
            throw Error(ErrorCode::InvalidArgument, "public_key does not match seed");
        }
        return kp;
    } catch (const Error& e) {
        throw Error(ErrorCode::InvalidArgument, "bad key file " + path.string() + ": " + e.what());
    }
}

void write_keyfile(const std::filesystem::path& path, const Keypair& kp) {
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << canonical_dump(keyfile_json(kp)) << '\n';
        if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    }
    ::chmod(path.c_str(), 0600);
}

Json stream_summary(const StreamState& s) {
    Json writers = Json::array();
    for (const auto& w : s.writers) writers.push_back(w.encoded());
    Json j{{"created_at", s.genesis.created_at},
           {"forked", s.forked},
           {"head_hash", s.head_hash().hex()},
           {"head_seq", s.head_seq()},
           {"kind", std::string(to_string(s.genesis.kind))},
           {"name", s.genesis.name},
           {"owner", s.genesis.owner.encoded()},
           {"owner_key", s.genesis.owner.public_key_hex()},
           {"stream", s.id().hex()},
           {"writers", writers}};
    if (s.genesis.scope) j["scope"] = s.genesis.scope->hex();
    if (s.fork_evidence) j["fork_evidence"] = fork_evidence_to_json(*s.fork_evidence);
    return j;
}

Json health(Node& node) {
    return {{"node", node.key().principal().encoded()},
            {"public_key", node.key().principal().public_key_hex()},
            {"status", "ok"},
            {"streams", node.streams().ids().size()}};
}

Json list_streams(Node& node) {
    Json arr = Json::array();
    for (const auto& s : node.streams().all()) arr.push_back(stream_summary(*s));
    return {{"streams", arr}};
}

Json publish_genesis(Node& node, const GenesisRecord& genesis) {
    auto state = load_verified(genesis, {});
    bool created = node.streams().insert(state);
    auto held = node.streams().get(genesis.stream_id);
    if (!created && canonical_dump(held->genesis.to_json()) != canonical_dump(genesis.to_json())) {
        throw Error(ErrorCode::ValidationRejected, "stream " + genesis.stream_id.hex() + " exists with another genesis");
    }
    return {{"created", created}, {"stream", stream_summary(*held)}};
}

Json publish_entries(Node& node, const StreamId& stream, const std::vector<ContentEntry>& entries) {
    if (entries.empty()) throw Error(ErrorCode::InvalidArgument, "no entries submitted");
    for (const auto& e : entries) {
        if (e.stream_id != stream) throw Error(ErrorCode::InvalidArgument, "entry belongs to another stream");
    }
    auto state = node.streams().append(stream, entries);
    return {{"appended", entries.size()}, {"stream", stream_summary(*state)}};
}

Json upload_blob(Node& node, ByteView bytes, const Attribution& attr, std::int64_t now) {
    auto hash = node.put_blob(bytes, attr);
    auto hint = issue_hint(node.key(), hash, node.primary_store()->locator(), now);
    node.add_hint(hint);
    return {{"content_hash", hash.hex()}, {"hint", hint.to_json()}, {"size", bytes.size()}};
}

Json accept_sync(Node& node, const SyncMessage& m) {
    if (m.kind != SyncMessage::Kind::EntriesResponse && m.kind != SyncMessage::Kind::Announce) {
        throw Error(ErrorCode::InvalidArgument, "expected ENTRIES_RESPONSE or ANNOUNCE");
    }
    if (!m.verify_signature()) throw Error(ErrorCode::ValidationRejected, "bad message signature");
    if (!m.genesis) throw Error(ErrorCode::InvalidArgument, "message carries no genesis");
    auto out = node.streams().accept(*m.genesis, m.entries);
    auto state = node.streams().get(m.genesis->stream_id);
    return {{"created", out.created},
            {"fork_detected", out.fork_detected},
            {"gap", out.gap},
            {"new_entries", out.new_entries},
            {"stream", state ? stream_summary(*state) : Json(nullptr)}};
}

SubscriptionSet subscriptions_for(Node& node, const std::optional<Digest>& reader) {
    if (!reader) return {};
    for (const auto& s : node.subscriptions()) {
        if (s.user && s.user->id() == *reader) return s;
    }
    return {};
}

ForumConfig forum_config(Node& node, const std::string& forum_id) {
    auto f = node.forum(forum_id);
    if (!f) throw Error(ErrorCode::NotFound, "unknown forum '" + forum_id + "'");
    return *f;
}

Feed forum_feed(Node& node, const ForumConfig& forum, const SubscriptionSet& subs, const FeedOptions& opts) {
    auto index = node.index();
    return assemble_forum_feed(forum, *index, subs, opts);
}

Feed forum_feed(Node& node, const ForumQuery& q) {
    auto subs = subscriptions_for(node, q.as);
    subs.disabled_defaults.insert(q.disable.begin(), q.disable.end());
    return forum_feed(node, forum_config(node, q.forum_id), subs, q.options);
}

Feed follow_feed(Node& node, const SubscriptionSet& subs, const FeedOptions& opts) {
    auto index = node.index();
    return assemble_follow_feed(subs, *index, opts);
}

Json forum_diff(Node& node, const ForumConfig& forum, const SubscriptionSet& subs, const FeedOptions& opts) {
    auto index = node.index();
    auto with = assemble_forum_feed(forum, *index, subs, opts);
    auto raw = assemble_raw_feed(forum.forum_id, forum.content_streams, *index, opts);
    auto d = feed_diff(with, raw);
    return {{"diff", d.to_json()},
            {"forum", forum.forum_id},
            {"hidden_items", d.hidden.size()},
            {"raw_items", raw.items.size()},
            {"snapshot", with.snapshot.hex()},
            {"visible_items", with.items.size()}};
}

std::vector<ModAction> actions_of(const StreamState& s) {
    std::vector<ModAction> out;
    for (const auto& e : s.entries) {
        if (e.payload_kind != PayloadKind::ModAction || !e.body) continue;
        try {
            out.push_back(ModAction::from_json(*e.body));
        } catch (const Error&) {
        }
    }
    return out;
}

ModeratorRanking rank(Node& node, const std::vector<StreamId>& candidates, const std::optional<StreamId>& history,
                      std::int64_t now) {
    auto index = node.index();
    std::vector<ModAction> actions;
    if (history) {
        const auto* h = index->stream(*history);
        if (!h) throw Error(ErrorCode::NotFound, "history stream " + history->hex() + " not indexed");
        actions = actions_of(*h);
    }
    return rank_moderators(candidates, *index, actions, now);
}

ContentionReport compare(Node& node, const StreamId& a, const StreamId& b, const std::vector<StreamId>& content) {
    auto index = node.index();
    const auto* sa = index->stream(a);
    const auto* sb = index->stream(b);
    if (!sa) throw Error(ErrorCode::NotFound, "stream " + a.hex() + " not indexed");
    if (!sb) throw Error(ErrorCode::NotFound, "stream " + b.hex() + " not indexed");
    return compare_streams(*sa, *sb, index->raw_entries(content), index->fetcher());
}

Json refuse(Node& node, const std::string& store_id, const RefusalTarget& target) {
    auto store = node.stores().by_id(store_id);
    if (!store) throw Error(ErrorCode::NotFound, "no store '" + store_id + "'");
    store->refuse(target);
    // refusal may delete blobs, so cached payloads are stale
    node.rebuild_index();
    Json refusals = Json::array();
    for (const auto& r : store->refusals()) refusals.push_back(r.encode());
    return {{"refusals", refusals}, {"store", store_id}, {"target", target.encode()}};
}

Json gc(Node& node) {
    auto removed = node.collect_garbage();
    return {{"removed", removed}, {"store", node.primary_store()->id()}};
}

Json add_store(Node& node, const BlobStoreConfig& cfg) {
    auto store = node.add_store(cfg);
    return {{"backend", std::string(to_string(store->backend()))}, {"locator", store->locator()}, {"store", store->id()}};
}

MigrationReport switch_provider_op(Node& node, const StreamId& stream, const std::string& from, const std::string& to,
                                   std::int64_t now) {
    auto report = switch_provider(node, stream, from, to, node.key(), now);
    node.rebuild_index();
    return report;
}

std::vector<StreamId> parse_stream_list(const std::string& csv) {
    std::vector<StreamId> out;
    std::size_t pos = 0;
    while (pos <= csv.size()) {
        auto comma = csv.find(',', pos);
        auto tok = csv.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!tok.empty()) {
            auto id = StreamId::from_hex(tok);
            if (!id) throw Error(ErrorCode::InvalidArgument, "bad stream id '" + tok + "'");
            out.push_back(*id);
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

} // namespace plurinet

#include "plurinet/sync.hpp"

#include <algorithm>
#include <charconv>

#include "plurinet/http.hpp"

namespace plurinet {

namespace {

constexpr std::pair<SyncMessage::Kind, std::string_view> kKindNames[] = {
    {SyncMessage::Kind::HeadRequest, "HEAD_REQUEST"},
    {SyncMessage::Kind::HeadResponse, "HEAD_RESPONSE"},
    {SyncMessage::Kind::EntriesRequest, "ENTRIES_REQUEST"},
    {SyncMessage::Kind::EntriesResponse, "ENTRIES_RESPONSE"},
    {SyncMessage::Kind::Announce, "ANNOUNCE"},
};

StreamId require_stream_id(const Json& j, std::string_view key) {
    auto id = StreamId::from_hex(require_string(j, key));
    if (!id) throw Error(ErrorCode::InvalidArgument, "bad stream id in '" + std::string(key) + "'");
    return *id;
}

Digest require_digest(const Json& j, std::string_view key) {
    auto d = Digest::from_hex(require_string(j, key));
    if (!d) throw Error(ErrorCode::InvalidArgument, "bad digest in '" + std::string(key) + "'");
    return *d;
}

void check_response(const PeerClient& peer, const SyncMessage& m, SyncMessage::Kind expected) {
    if (m.kind != expected) {
        throw Error(ErrorCode::ValidationRejected,
                    "peer sent " + std::string(to_string(m.kind)) + ", expected " + std::string(to_string(expected)));
    }
    if (!m.verify_signature()) throw Error(ErrorCode::ValidationRejected, "peer response signature does not verify");
    const auto& want = peer.address().node_id;
    if (want && !(m.sender && *m.sender == *want)) {
        throw Error(ErrorCode::ValidationRejected, "peer " + peer.address().endpoint + " is not " + want->encoded());
    }
}

SyncResult pull(StreamStore& store, PeerClient& peer, const HeadInfo& head) {
    SyncResult r;
    const auto& id = head.stream;
    auto local = store.get(id);
    const std::uint64_t lh = local ? local->head_seq() : 0;
    const std::uint64_t ph = head.head_seq;

    auto fetch = [&](std::uint64_t from, std::uint64_t to) {
        auto m = peer.entries(id, from, to);
        check_response(peer, m, SyncMessage::Kind::EntriesResponse);
        if (!m.genesis) throw Error(ErrorCode::ValidationRejected, "peer entries response lacks the genesis");
        if (m.genesis->stream_id != id) throw Error(ErrorCode::ValidationRejected, "peer answered for another stream");
        return m;
    };

    if (local && ph <= lh) {
        if (ph > 0 && record_hash(local->entries[ph - 1]) != head.head_hash) {
            auto m = fetch(ph, ph);
            auto out = store.accept(*m.genesis, m.entries);
            r.fork_detected = out.fork_detected;
        }
    } else if (!local || !local->forked) {
        std::uint64_t from = lh > 0 ? lh : 1;
        if (ph == 0) {
            auto m = fetch(1, 0);
            store.accept(*m.genesis, {});
        }
        while (from <= ph && ph > 0) {
            const std::uint64_t to = std::min(ph, from + kMaxEntriesPerResponse - 1);
            auto m = fetch(from, to);
            auto out = store.accept(*m.genesis, m.entries);
            r.new_entries += out.new_entries;
            if (out.fork_detected) {
                r.fork_detected = true;
                break;
            }
            if (out.gap || m.entries.empty() || m.entries.back().seq < from) break;
            from = m.entries.back().seq + 1;
        }
    }

    if (head.evidence && store.mark_forked(*head.evidence)) r.fork_detected = true;
    auto now = store.get(id);
    r.head_seq = now ? now->head_seq() : 0;
    return r;
}

} // namespace

Json PeerAddress::to_json() const {
    Json j = {{"endpoint", endpoint}};
    if (node_id) j["node_id"] = node_id->public_key_hex();
    return j;
}

PeerAddress PeerAddress::from_json(const Json& j) {
    if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "peer address must be an object");
    for (const auto& [k, _] : j.items()) {
        if (k != "endpoint" && k != "node_id") throw Error(ErrorCode::InvalidArgument, "unknown peer key '" + k + "'");
    }
    PeerAddress p;
    p.endpoint = require_string(j, "endpoint");
    if (j.contains("node_id")) {
        p.node_id = Principal::from_public_key_hex(require_string(j, "node_id"));
        if (!p.node_id) throw Error(ErrorCode::InvalidArgument, "bad peer node_id");
    }
    return p;
}

Json HeadInfo::to_json() const {
    Json j = {{"stream_id", stream.hex()},
              {"head_seq", head_seq},
              {"head_hash", head_hash.hex()},
              {"forked", forked}};
    if (evidence) j["fork_evidence"] = fork_evidence_to_json(*evidence);
    return j;
}

HeadInfo HeadInfo::from_json(const Json& j) {
    HeadInfo h;
    h.stream = require_stream_id(j, "stream_id");
    h.head_seq = require_uint(j, "head_seq");
    h.head_hash = require_digest(j, "head_hash");
    const auto& f = require(j, "forked");
    if (!f.is_boolean()) throw Error(ErrorCode::InvalidArgument, "'forked' must be a boolean");
    h.forked = f.get<bool>();
    if (j.contains("fork_evidence")) h.evidence = fork_evidence_from_json(j.at("fork_evidence"));
    return h;
}

HeadInfo head_of(const StreamState& s) {
    return {s.id(), s.head_seq(), s.head_hash(), s.forked, s.fork_evidence};
}

std::string_view to_string(SyncMessage::Kind k) {
    for (const auto& [kind, name] : kKindNames) {
        if (kind == k) return name;
    }
    return "?";
}

std::optional<SyncMessage::Kind> parse_message_kind(std::string_view text) {
    for (const auto& [kind, name] : kKindNames) {
        if (name == text) return kind;
    }
    return std::nullopt;
}

Json SyncMessage::to_json(bool with_signature) const {
    Json j = {{"kind", std::string(to_string(kind))}, {"from_seq", from_seq}, {"to_seq", to_seq}};
    if (stream_id) j["stream_id"] = stream_id->hex();
    Json hs = Json::array();
    for (const auto& h : heads) hs.push_back(h.to_json());
    j["heads"] = std::move(hs);
    if (genesis) j["genesis"] = genesis->to_json();
    Json es = Json::array();
    for (const auto& e : entries) es.push_back(e.to_json());
    j["entries"] = std::move(es);
    if (sender) j["sender"] = sender->public_key_hex();
    if (with_signature && signature) j["signature"] = signature->hex();
    return j;
}

SyncMessage SyncMessage::from_json(const Json& j) {
    if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "sync message must be an object");
    SyncMessage m;
    auto kind = parse_message_kind(require_string(j, "kind"));
    if (!kind) throw Error(ErrorCode::InvalidArgument, "unknown sync message kind");
    m.kind = *kind;
    m.from_seq = require_uint(j, "from_seq");
    m.to_seq = require_uint(j, "to_seq");
    if (j.contains("stream_id")) m.stream_id = require_stream_id(j, "stream_id");
    for (const auto& h : require(j, "heads")) m.heads.push_back(HeadInfo::from_json(h));
    if (j.contains("genesis")) m.genesis = GenesisRecord::from_json(j.at("genesis"));
    for (const auto& e : require(j, "entries")) m.entries.push_back(ContentEntry::from_json(e));
    if (j.contains("sender")) {
        m.sender = Principal::from_public_key_hex(require_string(j, "sender"));
        if (!m.sender) throw Error(ErrorCode::InvalidArgument, "bad sender key");
    }
    if (j.contains("signature")) {
        m.signature = Signature::from_hex(require_string(j, "signature"));
        if (!m.signature) throw Error(ErrorCode::InvalidArgument, "bad message signature");
    }
    return m;
}

void SyncMessage::sign(const Keypair& key) {
    sender = key.principal();
    signature.reset();
    signature = key.sign(canonical_dump(to_json(false)));
}

bool SyncMessage::verify_signature() const {
    if (!sender || !signature) return false;
    return verify(*sender, canonical_dump(to_json(false)), *signature);
}

std::string encode_frame(const SyncMessage& m) {
    auto body = canonical_dump(m.to_json());
    return std::to_string(body.size()) + "\n" + body;
}

std::vector<SyncMessage> decode_frames(std::string_view bytes) {
    std::vector<SyncMessage> out;
    while (!bytes.empty()) {
        auto nl = bytes.find('\n');
        if (nl == std::string_view::npos) throw Error(ErrorCode::InvalidArgument, "frame without length line");
        std::size_t len = 0;
        auto [ptr, ec] = std::from_chars(bytes.data(), bytes.data() + nl, len);
        if (ec != std::errc() || ptr != bytes.data() + nl || nl == 0) {
            throw Error(ErrorCode::InvalidArgument, "bad frame length");
        }
        if (bytes.size() - nl - 1 < len) throw Error(ErrorCode::InvalidArgument, "truncated frame");
        out.push_back(SyncMessage::from_json(parse_json(bytes.substr(nl + 1, len))));
        bytes.remove_prefix(nl + 1 + len);
    }
    return out;
}

SyncMessage answer(const StreamStore& store, const Keypair& node_key, const SyncMessage& request) {
    SyncMessage r;
    switch (request.kind) {
    case SyncMessage::Kind::HeadRequest:
        r.kind = SyncMessage::Kind::HeadResponse;
        r.stream_id = request.stream_id;
        if (request.stream_id) {
            if (auto s = store.get(*request.stream_id)) r.heads.push_back(head_of(*s));
        } else {
            for (const auto& s : store.all()) r.heads.push_back(head_of(*s));
        }
        break;
    case SyncMessage::Kind::EntriesRequest: {
        if (!request.stream_id) throw Error(ErrorCode::InvalidArgument, "entries request without stream_id");
        auto s = store.get(*request.stream_id);
        if (!s) throw Error(ErrorCode::NotFound, "no stream " + request.stream_id->hex());
        r.kind = SyncMessage::Kind::EntriesResponse;
        r.stream_id = request.stream_id;
        r.genesis = s->genesis;
        const std::uint64_t from = std::max<std::uint64_t>(request.from_seq, 1);
        std::uint64_t to = std::min(request.to_seq, s->head_seq());
        if (to >= from) to = std::min(to, from + kMaxEntriesPerResponse - 1);
        for (std::uint64_t seq = from; seq <= to; ++seq) r.entries.push_back(s->entries[seq - 1]);
        r.from_seq = from;
        r.to_seq = r.entries.empty() ? from - 1 : to;
        break;
    }
    default:
        throw Error(ErrorCode::InvalidArgument, "cannot answer " + std::string(to_string(request.kind)));
    }
    r.sign(node_key);
    return r;
}

LocalPeer::LocalPeer(const StreamStore& store, Keypair node_key, std::string endpoint)
    : store_(store), key_(std::move(node_key)) {
    address_.node_id = key_.principal();
    address_.endpoint = std::move(endpoint);
}

SyncMessage LocalPeer::heads(const std::optional<StreamId>& stream) {
    if (!online_) throw Error(ErrorCode::PeerUnreachable, address_.endpoint + " is offline");
    SyncMessage req;
    req.kind = SyncMessage::Kind::HeadRequest;
    req.stream_id = stream;
    return answer(store_, key_, req);
}

SyncMessage LocalPeer::entries(const StreamId& stream, std::uint64_t from_seq, std::uint64_t to_seq) {
    if (!online_) throw Error(ErrorCode::PeerUnreachable, address_.endpoint + " is offline");
    SyncMessage req;
    req.kind = SyncMessage::Kind::EntriesRequest;
    req.stream_id = stream;
    req.from_seq = from_seq;
    req.to_seq = to_seq;
    return answer(store_, key_, req);
}

HttpPeer::HttpPeer(PeerAddress address) : address_(std::move(address)) {}

SyncMessage HttpPeer::fetch(const std::string& path) {
    auto ep = http::Endpoint::parse(address_.endpoint);
    if (!ep) throw Error(ErrorCode::InvalidArgument, "bad peer endpoint " + address_.endpoint);
    auto res = http::get(*ep, path);
    if (!res) throw Error(ErrorCode::PeerUnreachable, "peer " + address_.endpoint + " unreachable");
    if (res->status == 404) throw Error(ErrorCode::NotFound, "peer " + address_.endpoint + ": " + path + " not found");
    if (res->status != 200) {
        throw Error(ErrorCode::ValidationRejected,
                    "peer " + address_.endpoint + " answered " + std::to_string(res->status) + ": " + res->body);
    }
    try {
        return SyncMessage::from_json(parse_json(res->body));
    } catch (const Error& e) {
        throw Error(ErrorCode::ValidationRejected, std::string("malformed peer response: ") + e.what());
    }
}

SyncMessage HttpPeer::heads(const std::optional<StreamId>& stream) {
    return fetch(stream ? "/sync/head/" + stream->hex() : "/sync/heads");
}

SyncMessage HttpPeer::entries(const StreamId& stream, std::uint64_t from_seq, std::uint64_t to_seq) {
    return fetch("/streams/" + stream.hex() + "/entries?from=" + std::to_string(from_seq) +
                 "&to=" + std::to_string(to_seq));
}

std::unique_ptr<PeerClient> connect_peer(const PeerAddress& address) {
    if (address.endpoint.rfind("http://", 0) == 0) return std::make_unique<HttpPeer>(address);
    throw Error(ErrorCode::InvalidArgument, "unsupported peer endpoint " + address.endpoint);
}

SyncResult sync_stream(StreamStore& store, PeerClient& peer, const StreamId& stream) {
    auto local_result = [&] {
        auto local = store.get(stream);
        return SyncResult{0, false, local ? local->head_seq() : 0};
    };
    SyncMessage m;
    try {
        m = peer.heads(stream);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::NotFound) return local_result();
        throw;
    }
    check_response(peer, m, SyncMessage::Kind::HeadResponse);
    auto it = std::find_if(m.heads.begin(), m.heads.end(), [&](const HeadInfo& h) { return h.stream == stream; });
    if (it == m.heads.end()) return local_result();
    return pull(store, peer, *it);
}

Json GossipReport::to_json() const {
    Json forks = Json::array();
    for (const auto& f : forks_detected) forks.push_back(f.hex());
    return {{"peers_contacted", peers_contacted}, {"unreachable", unreachable},
            {"entries_transferred", entries_transferred}, {"streams_synced", streams_synced},
            {"forks_detected", forks}, {"rejected", rejected}};
}

GossipReport gossip_round(StreamStore& store, const std::vector<PeerClient*>& peers, const StreamFilter& wanted) {
    GossipReport report;
    for (auto* peer : peers) {
        SyncMessage m;
        try {
            m = peer->heads(std::nullopt);
            check_response(*peer, m, SyncMessage::Kind::HeadResponse);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::PeerUnreachable) {
                report.unreachable.push_back(peer->address().endpoint);
            } else {
                report.rejected.push_back(peer->address().endpoint + ": " + e.what());
            }
            continue;
        }
        ++report.peers_contacted;
        for (const auto& head : m.heads) {
            if (wanted && !wanted(head.stream)) continue;
            auto local = store.get(head.stream);
            const bool differs = !local || local->head_seq() != head.head_seq || local->head_hash() != head.head_hash ||
                                 (head.forked && !local->forked);
            if (!differs) continue;
            try {
                auto r = pull(store, *peer, head);
                report.entries_transferred += r.new_entries;
                if (r.new_entries > 0 || r.fork_detected) ++report.streams_synced;
                if (r.fork_detected) report.forks_detected.push_back(head.stream);
            } catch (const Error& e) {
                if (e.code() == ErrorCode::PeerUnreachable) {
                    report.unreachable.push_back(peer->address().endpoint);
                    break;
                }
                report.rejected.push_back(head.stream.hex() + ": " + e.what());
            }
        }
    }
    return report;
}

} // namespace plurinet

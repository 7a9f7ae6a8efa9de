#include "plurinet/content_stream.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

namespace plurinet {

namespace {

constexpr std::uint8_t kStreamIdSeparator = 0x1F;

const std::vector<std::string_view> kGenesisKeys = {
    "created_at", "kind", "name", "owner", "prev_hash", "scope", "seq", "signature", "stream_id", "writers"};
const std::vector<std::string_view> kEntryKeys = {
    "author", "body", "content_hash", "payload_kind", "prev_hash", "reply_to",
    "seq", "signature", "stream_id", "timestamp"};

void reject_unknown_keys(const Json& j, const std::vector<std::string_view>& allowed) {
    if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "record must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw Error(ErrorCode::InvalidArgument, "unknown record field '" + key + "'");
        }
    }
}

Digest parse_digest(const Json& j, std::string_view key) {
    auto text = require_string(j, key);
    auto d = Digest::from_hex(text);
    if (!d || d->hex() != text) {
        throw Error(ErrorCode::InvalidArgument, "field '" + std::string(key) + "' is not a lowercase SHA-256 hex");
    }
    return *d;
}

Principal parse_principal_key(const Json& value, std::string_view what) {
    if (!value.is_string()) throw Error(ErrorCode::InvalidArgument, std::string(what) + " must be a hex string");
    auto text = value.get<std::string>();
    auto p = Principal::from_public_key_hex(text);
    if (!p || p->public_key_hex() != text) {
        throw Error(ErrorCode::InvalidArgument, std::string(what) + " is not a lowercase 32-byte public key hex");
    }
    return *p;
}

Signature parse_signature(const Json& j) {
    auto text = require_string(j, "signature");
    auto s = Signature::from_hex(text);
    if (!s || s->hex() != text) throw Error(ErrorCode::InvalidArgument, "malformed signature");
    return *s;
}

bool contains(const std::vector<Principal>& set, const Principal& p) {
    return std::find(set.begin(), set.end(), p) != set.end();
}

// Returns false if the body is structurally invalid for a writer update.
bool apply_writer_update(const Json& body, const Principal& owner, std::vector<Principal>& writers) {
    std::vector<Principal> add, remove;
    for (auto [key, target] : {std::pair{"add", &add}, std::pair{"remove", &remove}}) {
        auto it = body.find(key);
        if (it == body.end()) continue;
        if (!it->is_array()) return false;
        for (const auto& v : *it) {
            if (!v.is_string()) return false;
            auto p = Principal::from_public_key_hex(v.get<std::string>());
            if (!p) return false;
            target->push_back(*p);
        }
    }
    if (contains(remove, owner)) return false;
    for (const auto& p : add) {
        if (!contains(writers, p)) writers.push_back(p);
    }
    std::erase_if(writers, [&](const Principal& w) { return contains(remove, w); });
    return true;
}

bool payload_consistent(const ContentEntry& e) {
    if (!is_inline_kind(e.payload_kind)) return !e.body.has_value();
    if (!e.body || !e.body->is_object()) return false;
    try {
        if (sha256(canonical_dump(*e.body)) != e.content_hash) return false;
    } catch (const Error&) {
        return false;
    }
    if (e.payload_kind == PayloadKind::Tombstone) {
        auto it = e.body->find("target_seq");
        if (it == e.body->end() || !it->is_number_unsigned()) return false;
        auto target = it->get<std::uint64_t>();
        return target >= 1 && target < e.seq;
    }
    return true;
}

void fsync_path(const std::filesystem::path& path) {
    int fd = ::open(path.c_str(), O_RDONLY);
    if (fd >= 0) {
        ::fsync(fd);
        ::close(fd);
    }
}

} // namespace

std::string_view to_string(StreamKind kind) {
    return kind == StreamKind::Content ? "CONTENT" : "MODERATION";
}

std::string_view to_string(PayloadKind kind) {
    switch (kind) {
    case PayloadKind::Post: return "POST";
    case PayloadKind::Reply: return "REPLY";
    case PayloadKind::Edit: return "EDIT";
    case PayloadKind::Tombstone: return "TOMBSTONE";
    case PayloadKind::ModAction: return "MOD_ACTION";
    case PayloadKind::WriterUpdate: return "WRITER_UPDATE";
    }
    return "POST";
}

std::optional<StreamKind> parse_stream_kind(std::string_view text) {
    if (text == "CONTENT") return StreamKind::Content;
    if (text == "MODERATION") return StreamKind::Moderation;
    return std::nullopt;
}

std::optional<PayloadKind> parse_payload_kind(std::string_view text) {
    for (auto k : {PayloadKind::Post, PayloadKind::Reply, PayloadKind::Edit, PayloadKind::Tombstone,
                   PayloadKind::ModAction, PayloadKind::WriterUpdate}) {
        if (to_string(k) == text) return k;
    }
    return std::nullopt;
}

bool is_inline_kind(PayloadKind kind) {
    return kind == PayloadKind::Tombstone || kind == PayloadKind::ModAction ||
           kind == PayloadKind::WriterUpdate;
}

std::string_view to_string(ValidationReason reason) {
    switch (reason) {
    case ValidationReason::BadSignature: return "BAD_SIGNATURE";
    case ValidationReason::BadChain: return "BAD_CHAIN";
    case ValidationReason::BadSeq: return "BAD_SEQ";
    case ValidationReason::UnauthorizedWriter: return "UNAUTHORIZED_WRITER";
    case ValidationReason::Fork: return "FORK";
    case ValidationReason::BadPayload: return "BAD_PAYLOAD";
    }
    return "BAD_CHAIN";
}

StreamId StreamId::derive(const Principal& owner, std::string_view name) {
    Bytes buf(owner.public_key().begin(), owner.public_key().end());
    buf.push_back(kStreamIdSeparator);
    buf.insert(buf.end(), name.begin(), name.end());
    return {sha256(buf)};
}

std::optional<StreamId> StreamId::from_hex(std::string_view hex) {
    auto d = Digest::from_hex(hex);
    if (!d || d->hex() != hex) return std::nullopt;
    return StreamId{*d};
}

std::string EntryRef::to_string() const {
    return "ref:" + stream.hex() + ":" + std::to_string(seq);
}

std::optional<EntryRef> EntryRef::parse(std::string_view text) {
    if (!text.starts_with("ref:")) return std::nullopt;
    text.remove_prefix(4);
    auto colon = text.find(':');
    if (colon == std::string_view::npos) return std::nullopt;
    auto sid = StreamId::from_hex(text.substr(0, colon));
    auto digits = text.substr(colon + 1);
    if (!sid || digits.empty() || digits.size() > 20) return std::nullopt;
    if (digits.size() > 1 && digits[0] == '0') return std::nullopt;
    std::uint64_t seq = 0;
    for (char c : digits) {
        if (c < '0' || c > '9') return std::nullopt;
        seq = seq * 10 + static_cast<std::uint64_t>(c - '0');
    }
    return EntryRef{*sid, seq};
}

Json GenesisRecord::to_json(bool with_signature) const {
    Json j = Json::object();
    j["created_at"] = created_at;
    j["kind"] = std::string(plurinet::to_string(kind));
    j["name"] = name;
    j["owner"] = owner.public_key_hex();
    j["prev_hash"] = Digest::zero().hex();
    if (scope) j["scope"] = scope->hex();
    j["seq"] = 0;
    j["stream_id"] = stream_id.hex();
    Json ws = Json::array();
    for (const auto& w : writers) ws.push_back(w.public_key_hex());
    j["writers"] = std::move(ws);
    if (with_signature) j["signature"] = signature.hex();
    return j;
}

GenesisRecord GenesisRecord::from_json(const Json& j) {
    reject_unknown_keys(j, kGenesisKeys);
    GenesisRecord g;
    if (require_uint(j, "seq") != 0) throw Error(ErrorCode::InvalidArgument, "genesis seq must be 0");
    if (parse_digest(j, "prev_hash") != Digest::zero()) {
        throw Error(ErrorCode::InvalidArgument, "genesis prev_hash must be zero");
    }
    auto sid = StreamId::from_hex(require_string(j, "stream_id"));
    if (!sid) throw Error(ErrorCode::InvalidArgument, "malformed stream_id");
    g.stream_id = *sid;
    g.owner = parse_principal_key(require(j, "owner"), "owner");
    g.name = require_string(j, "name");
    auto kind = parse_stream_kind(require_string(j, "kind"));
    if (!kind) throw Error(ErrorCode::InvalidArgument, "unknown stream kind");
    g.kind = *kind;
    const auto& ws = require(j, "writers");
    if (!ws.is_array()) throw Error(ErrorCode::InvalidArgument, "writers must be an array");
    for (const auto& w : ws) g.writers.push_back(parse_principal_key(w, "writer"));
    g.created_at = require_int(j, "created_at");
    if (j.contains("scope")) {
        auto scope = StreamId::from_hex(require_string(j, "scope"));
        if (!scope) throw Error(ErrorCode::InvalidArgument, "malformed scope");
        g.scope = *scope;
    }
    g.signature = parse_signature(j);
    return g;
}

Json ContentEntry::to_json(bool with_signature) const {
    Json j = Json::object();
    j["author"] = author.public_key_hex();
    if (body) j["body"] = *body;
    j["content_hash"] = content_hash.hex();
    j["payload_kind"] = std::string(plurinet::to_string(payload_kind));
    j["prev_hash"] = prev_hash.hex();
    if (reply_to) j["reply_to"] = Json{{"seq", reply_to->seq}, {"stream_id", reply_to->stream.hex()}};
    j["seq"] = seq;
    j["stream_id"] = stream_id.hex();
    j["timestamp"] = timestamp;
    if (with_signature) j["signature"] = signature.hex();
    return j;
}

ContentEntry ContentEntry::from_json(const Json& j) {
    reject_unknown_keys(j, kEntryKeys);
    ContentEntry e;
    e.author = parse_principal_key(require(j, "author"), "author");
    if (j.contains("body")) e.body = j.at("body");
    e.content_hash = parse_digest(j, "content_hash");
    auto kind = parse_payload_kind(require_string(j, "payload_kind"));
    if (!kind) throw Error(ErrorCode::InvalidArgument, "unknown payload_kind");
    e.payload_kind = *kind;
    e.prev_hash = parse_digest(j, "prev_hash");
    if (j.contains("reply_to")) {
        const auto& r = j.at("reply_to");
        auto sid = StreamId::from_hex(require_string(r, "stream_id"));
        if (!sid) throw Error(ErrorCode::InvalidArgument, "malformed reply_to.stream_id");
        e.reply_to = EntryRef{*sid, require_uint(r, "seq")};
    }
    e.seq = require_uint(j, "seq");
    auto sid = StreamId::from_hex(require_string(j, "stream_id"));
    if (!sid) throw Error(ErrorCode::InvalidArgument, "malformed stream_id");
    e.stream_id = *sid;
    e.timestamp = require_int(j, "timestamp");
    e.signature = parse_signature(j);
    return e;
}

bool ContentEntry::operator==(const ContentEntry& o) const {
    return canonical_bytes(*this) == canonical_bytes(o) && signature == o.signature;
}

std::string canonical_bytes(const GenesisRecord& g) { return canonical_dump(g.to_json(false)); }
std::string canonical_bytes(const ContentEntry& e) { return canonical_dump(e.to_json(false)); }

Digest record_hash(const GenesisRecord& g) { return sha256(canonical_bytes(g)); }
Digest record_hash(const ContentEntry& e) { return sha256(canonical_bytes(e)); }

Digest StreamState::head_hash() const {
    return entries.empty() ? record_hash(genesis) : record_hash(entries.back());
}

bool StreamState::is_writer(const Principal& p) const { return contains(writers, p); }

bool ValidationReport::has(ValidationReason r) const {
    return std::find(reasons.begin(), reasons.end(), r) != reasons.end();
}

StreamState create_stream(const Keypair& owner, std::string_view name, StreamKind kind,
                          std::vector<Principal> writers, std::optional<std::int64_t> created_at,
                          std::optional<StreamId> scope) {
    if (name.size() > kMaxStreamNameBytes) {
        throw Error(ErrorCode::InvalidArgument, "stream name exceeds 256 bytes");
    }
    const auto& me = owner.principal();
    if (!contains(writers, me)) writers.insert(writers.begin(), me);
    // dedupe, keeping first occurrence
    std::vector<Principal> unique;
    for (const auto& w : writers) {
        if (!contains(unique, w)) unique.push_back(w);
    }

    StreamState s;
    s.genesis.owner = me;
    s.genesis.name = std::string(name);
    s.genesis.stream_id = StreamId::derive(me, name);
    s.genesis.kind = kind;
    s.genesis.writers = unique;
    s.genesis.created_at = created_at.value_or(unix_now());
    s.genesis.scope = scope;
    s.genesis.signature = owner.sign(canonical_bytes(s.genesis));
    s.writers = std::move(unique);
    return s;
}

ContentEntry make_entry(const StreamState& state, const Keypair& author, PayloadKind kind,
                        ByteView payload, const AppendOptions& opts) {
    ContentEntry e;
    e.stream_id = state.id();
    e.seq = state.head_seq() + 1;
    e.author = author.principal();
    e.timestamp = opts.timestamp.value_or(unix_now());
    e.payload_kind = kind;
    e.reply_to = opts.reply_to;
    e.prev_hash = state.head_hash();
    if (is_inline_kind(kind)) {
        Json body = parse_json({reinterpret_cast<const char*>(payload.data()), payload.size()});
        if (!body.is_object()) {
            throw Error(ErrorCode::InvalidArgument, "inline payload must be a JSON object");
        }
        e.content_hash = sha256(canonical_dump(body));
        e.body = std::move(body);
    } else {
        e.content_hash = sha256(payload);
    }
    e.signature = author.sign(canonical_bytes(e));
    return e;
}

StreamState extend(StreamState state, const ContentEntry& e) {
    if (state.forked) {
        throw Error(ErrorCode::ForkedStream, "stream " + state.id().hex() + " is forked; appends refused");
    }
    if (e.stream_id != state.id()) {
        throw Error(ErrorCode::ValidationRejected, "entry belongs to a different stream");
    }
    if (e.seq != state.head_seq() + 1) {
        throw Error(ErrorCode::ValidationRejected,
                    "expected seq " + std::to_string(state.head_seq() + 1) + ", got " + std::to_string(e.seq));
    }
    if (e.prev_hash != state.head_hash()) {
        throw Error(ErrorCode::ValidationRejected, "prev_hash does not match head");
    }
    if (!verify(e.author, canonical_bytes(e), e.signature)) {
        throw Error(ErrorCode::ValidationRejected, "bad signature on seq " + std::to_string(e.seq));
    }
    if (!state.is_writer(e.author) ||
        (e.payload_kind == PayloadKind::WriterUpdate && e.author != state.genesis.owner)) {
        throw Error(ErrorCode::UnauthorizedWriter,
                    e.author.encoded() + " may not write to stream " + state.id().hex());
    }
    if (!payload_consistent(e)) {
        throw Error(ErrorCode::ValidationRejected, "inline payload inconsistent with content_hash");
    }
    if (e.payload_kind == PayloadKind::WriterUpdate &&
        !apply_writer_update(*e.body, state.genesis.owner, state.writers)) {
        throw Error(ErrorCode::ValidationRejected, "malformed writer update");
    }
    state.entries.push_back(e);
    return state;
}

AppendResult append(StreamState state, const Keypair& author, PayloadKind kind, ByteView payload,
                    const AppendOptions& opts) {
    if (state.forked) {
        throw Error(ErrorCode::ForkedStream, "stream " + state.id().hex() + " is forked; appends refused");
    }
    if (!state.is_writer(author.principal())) {
        throw Error(ErrorCode::UnauthorizedWriter,
                    author.principal().encoded() + " may not write to stream " + state.id().hex());
    }
    auto entry = make_entry(state, author, kind, payload, opts);
    auto next = extend(std::move(state), entry);
    return {std::move(next), std::move(entry)};
}

bool verify_genesis(const GenesisRecord& g) {
    return g.name.size() <= kMaxStreamNameBytes && StreamId::derive(g.owner, g.name) == g.stream_id &&
           contains(g.writers, g.owner) && verify(g.owner, canonical_bytes(g), g.signature);
}

ValidationReport verify_stream(const GenesisRecord& genesis, const std::vector<ContentEntry>& entries) {
    ValidationReport report;
    auto fail = [&](std::uint64_t seq, ValidationReason reason) {
        report.ok = false;
        if (!report.first_bad_seq) report.first_bad_seq = seq;
        if (!report.has(reason)) report.reasons.push_back(reason);
    };

    if (StreamId::derive(genesis.owner, genesis.name) != genesis.stream_id) fail(0, ValidationReason::BadChain);
    if (!verify(genesis.owner, canonical_bytes(genesis), genesis.signature)) fail(0, ValidationReason::BadSignature);
    if (!contains(genesis.writers, genesis.owner)) fail(0, ValidationReason::UnauthorizedWriter);
    if (genesis.name.size() > kMaxStreamNameBytes) fail(0, ValidationReason::BadPayload);

    std::vector<Principal> writers = genesis.writers;
    std::uint64_t expected = 1;
    Digest prev_hash = record_hash(genesis);
    const ContentEntry* prev = nullptr;

    for (const auto& e : entries) {
        if (prev && e.seq == prev->seq && e.stream_id == prev->stream_id) {
            if (detect_fork(*prev, e)) fail(e.seq, ValidationReason::Fork);
            else fail(expected, ValidationReason::BadSeq);
            continue;
        }
        const bool sig_ok = verify(e.author, canonical_bytes(e), e.signature);
        std::vector<ValidationReason> here;
        if (e.seq != expected) here.push_back(ValidationReason::BadSeq);
        if (e.stream_id != genesis.stream_id || e.prev_hash != prev_hash) here.push_back(ValidationReason::BadChain);
        if (!sig_ok) here.push_back(ValidationReason::BadSignature);
        const bool authorized = contains(writers, e.author) &&
                                (e.payload_kind != PayloadKind::WriterUpdate || e.author == genesis.owner);
        if (!authorized) here.push_back(ValidationReason::UnauthorizedWriter);
        bool payload_ok = payload_consistent(e);
        if (payload_ok && sig_ok && authorized && e.payload_kind == PayloadKind::WriterUpdate) {
            payload_ok = apply_writer_update(*e.body, genesis.owner, writers);
        }
        if (!payload_ok) here.push_back(ValidationReason::BadPayload);

        if (!here.empty()) {
            // A validly signed entry is identified by its own seq (e.g. after a
            // gap); a tampered one by the position it occupies.
            const std::uint64_t at = (e.seq != expected && sig_ok) ? e.seq : expected;
            for (auto r : here) fail(at, r);
        }
        expected = sig_ok ? e.seq + 1 : expected + 1;
        prev_hash = record_hash(e);
        prev = &e;
    }
    return report;
}

std::optional<ForkEvidence> detect_fork(const ContentEntry& a, const ContentEntry& b) {
    if (a.stream_id != b.stream_id || a.seq != b.seq) return std::nullopt;
    if (record_hash(a) == record_hash(b)) return std::nullopt;
    if (!verify(a.author, canonical_bytes(a), a.signature) || !verify(b.author, canonical_bytes(b), b.signature)) {
        return std::nullopt;
    }
    return ForkEvidence{a, b};
}

StreamState load_verified(const GenesisRecord& genesis, const std::vector<ContentEntry>& entries) {
    auto report = verify_stream(genesis, entries);
    if (!report.ok) {
        std::string reasons;
        for (auto r : report.reasons) reasons += std::string(reasons.empty() ? "" : ",") + std::string(to_string(r));
        throw Error(ErrorCode::ValidationRejected, "stream " + genesis.stream_id.hex() + " invalid at seq " +
                                                       std::to_string(*report.first_bad_seq) + ": " + reasons);
    }
    StreamState s;
    s.genesis = genesis;
    s.writers = genesis.writers;
    for (const auto& e : entries) {
        if (e.payload_kind == PayloadKind::WriterUpdate) apply_writer_update(*e.body, genesis.owner, s.writers);
    }
    s.entries = entries;
    return s;
}

std::string to_csl(const GenesisRecord& genesis, const std::vector<ContentEntry>& entries) {
    std::string out = canonical_dump(genesis.to_json());
    out += '\n';
    for (const auto& e : entries) {
        out += canonical_dump(e.to_json());
        out += '\n';
    }
    return out;
}

CslContents parse_csl(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    bool unterminated_tail = false;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            lines.push_back(text.substr(pos));
            unterminated_tail = true;
            break;
        }
        lines.push_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }

    CslContents out;
    if (lines.empty()) throw Error(ErrorCode::InvalidArgument, "empty stream file");
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const bool last = i + 1 == lines.size();
        try {
            Json j = parse_json(lines[i]);
            if (i == 0) {
                out.genesis = GenesisRecord::from_json(j);
            } else {
                out.entries.push_back(ContentEntry::from_json(j));
            }
        } catch (const Error& e) {
            if (last && unterminated_tail && i > 0) {
                out.truncated_tail = true;
                break;
            }
            throw Error(ErrorCode::InvalidArgument, "line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return out;
}

CslContents read_csl_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_csl(ss.str());
}

void write_csl_file(const std::filesystem::path& path, const StreamState& state) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + tmp.string());
        out << to_csl(state);
        out.flush();
        if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + tmp.string());
    }
    fsync_path(tmp);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "rename failed for " + path.string() + ": " + ec.message());
}

Json fork_evidence_to_json(const ForkEvidence& ev) {
    return Json{{"first", ev.first.to_json()}, {"second", ev.second.to_json()}};
}

ForkEvidence fork_evidence_from_json(const Json& j) {
    return {ContentEntry::from_json(require(j, "first")), ContentEntry::from_json(require(j, "second"))};
}

} // namespace plurinet

#include "plurinet/migration.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace plurinet {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad_digest(const std::string& what) { throw Error(ErrorCode::BadDigest, "bundle rejected: " + what); }

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) bad_digest("missing " + p.filename().string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, std::string_view bytes) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + p.string());
}

Json hints_json(const std::vector<StorageHint>& hints) {
    Json arr = Json::array();
    for (const auto& h : hints) arr.push_back(h.to_json());
    return arr;
}

Json subs_json(const std::vector<SubscriptionSet>& subs) {
    Json arr = Json::array();
    for (const auto& s : subs) arr.push_back(s.to_json());
    return arr;
}

Json digest_list(const std::vector<Digest>& ds) {
    Json arr = Json::array();
    for (const auto& d : ds) arr.push_back(d.hex());
    return arr;
}

std::vector<Digest> parse_digests(const Json& arr) {
    std::vector<Digest> out;
    for (const auto& v : arr) {
        auto d = v.is_string() ? Digest::from_hex(v.get<std::string>()) : std::nullopt;
        if (!d) throw Error(ErrorCode::InvalidArgument, "bad digest in manifest");
        out.push_back(*d);
    }
    return out;
}

Digest parse_digest(const Json& j, std::string_view key) {
    auto d = Digest::from_hex(require_string(j, key));
    if (!d) throw Error(ErrorCode::InvalidArgument, "bad digest in '" + std::string(key) + "'");
    return *d;
}

fs::path blob_path(const fs::path& dir, const Digest& h) {
    auto hex = h.hex();
    return dir / "blobs" / hex.substr(0, 2) / hex;
}

} // namespace

Json ExportManifest::body_json() const {
    Json ss = Json::array();
    for (const auto& s : streams) {
        ss.push_back({{"stream_id", s.stream.hex()}, {"head_seq", s.head_seq}, {"head_hash", s.head_hash.hex()}});
    }
    Json j = {{"created_at", created_at},
              {"streams", ss},
              {"blobs", digest_list(blobs)},
              {"missing_blobs", digest_list(missing_blobs)},
              {"hints_digest", hints_digest.hex()},
              {"subscriptions_digest", subscriptions_digest.hex()}};
    if (keys_digest) j["keys_digest"] = keys_digest->hex();
    return j;
}

Json ExportManifest::to_json() const {
    auto j = body_json();
    j["bundle_digest"] = bundle_digest.hex();
    return j;
}

ExportManifest ExportManifest::from_json(const Json& j) {
    ExportManifest m;
    m.created_at = require_int(j, "created_at");
    for (const auto& s : require(j, "streams")) {
        auto id = StreamId::from_hex(require_string(s, "stream_id"));
        if (!id) throw Error(ErrorCode::InvalidArgument, "bad stream id in manifest");
        m.streams.push_back({*id, require_uint(s, "head_seq"), parse_digest(s, "head_hash")});
    }
    m.blobs = parse_digests(require(j, "blobs"));
    m.missing_blobs = parse_digests(require(j, "missing_blobs"));
    m.hints_digest = parse_digest(j, "hints_digest");
    m.subscriptions_digest = parse_digest(j, "subscriptions_digest");
    if (j.contains("keys_digest")) m.keys_digest = parse_digest(j, "keys_digest");
    m.bundle_digest = parse_digest(j, "bundle_digest");
    return m;
}

Digest bundle_digest(const ExportManifest& m) { return sha256(canonical_dump(m.body_json())); }

ExportBundle export_bundle(Node& node, const ExportOptions& opts) {
    ExportBundle b;
    std::vector<std::shared_ptr<const StreamState>> selected;
    if (opts.streams.empty()) {
        selected = node.streams().all();
    } else {
        std::set<StreamId> seen;
        for (const auto& id : opts.streams) {
            auto s = node.streams().get(id);
            if (!s) throw Error(ErrorCode::NotFound, "no stream " + id.hex());
            if (seen.insert(id).second) selected.push_back(s);
        }
    }
    std::sort(selected.begin(), selected.end(), [](const auto& a, const auto& b) { return a->id() < b->id(); });

    std::set<Digest> wanted;
    std::int64_t newest = 0;
    for (const auto& s : selected) {
        auto report = verify_stream(s->genesis, s->entries);
        if (!report.ok) throw Error(ErrorCode::ValidationRejected, "stream " + s->id().hex() + " does not verify");
        b.streams.emplace(s->id(), to_csl(*s));
        b.manifest.streams.push_back({s->id(), s->head_seq(), s->head_hash()});
        newest = std::max(newest, s->genesis.created_at);
        for (const auto& e : s->entries) {
            newest = std::max(newest, e.timestamp);
            if (!is_inline_kind(e.payload_kind)) wanted.insert(e.content_hash);
        }
    }
    for (const auto& h : wanted) {
        auto bytes = node.resolve_blob(h);
        if (bytes) {
            b.blobs.emplace(h, std::move(*bytes));
            b.manifest.blobs.push_back(h);
        } else {
            b.manifest.missing_blobs.push_back(h);
            b.warnings.push_back("unresolvable blob " + h.hex() + " exported as metadata only");
        }
    }

    for (const auto& h : node.hints()) {
        if (wanted.contains(h.content_hash)) b.hints.push_back(h);
    }
    std::sort(b.hints.begin(), b.hints.end(), [](const StorageHint& x, const StorageHint& y) {
        return canonical_dump(x.to_json()) < canonical_dump(y.to_json());
    });
    for (const auto& h : b.hints) newest = std::max(newest, h.issued_at);
    b.subscriptions = node.subscriptions();
    if (opts.include_keys) {
        b.keys = Json{{"node", {{"seed", to_hex(node.key().secret_seed())},
                                {"public_key", node.key().principal().public_key_hex()}}}};
        b.manifest.keys_digest = sha256(canonical_dump(*b.keys));
    }

    b.manifest.created_at = newest;
    b.manifest.hints_digest = sha256(canonical_dump(hints_json(b.hints)));
    b.manifest.subscriptions_digest = sha256(canonical_dump(subs_json(b.subscriptions)));
    b.manifest.bundle_digest = bundle_digest(b.manifest);
    return b;
}

void verify_bundle(const ExportBundle& b) {
    const auto& m = b.manifest;
    if (bundle_digest(m) != m.bundle_digest) bad_digest("manifest digest mismatch");

    if (b.streams.size() != m.streams.size()) bad_digest("stream set differs from manifest");
    for (const auto& ms : m.streams) {
        auto it = b.streams.find(ms.stream);
        if (it == b.streams.end()) bad_digest("stream " + ms.stream.hex() + " missing");
        CslContents csl;
        try {
            csl = parse_csl(it->second);
        } catch (const Error& e) {
            bad_digest("stream " + ms.stream.hex() + " unreadable: " + e.what());
        }
        if (csl.truncated_tail || csl.genesis.stream_id != ms.stream) bad_digest("stream " + ms.stream.hex() + " damaged");
        if (!verify_stream(csl.genesis, csl.entries).ok) bad_digest("stream " + ms.stream.hex() + " does not verify");
        const auto head = csl.entries.empty() ? record_hash(csl.genesis) : record_hash(csl.entries.back());
        if (csl.entries.size() != ms.head_seq || head != ms.head_hash) {
            bad_digest("stream " + ms.stream.hex() + " head differs from manifest");
        }
        if (to_csl(csl.genesis, csl.entries) != it->second) bad_digest("stream " + ms.stream.hex() + " is not canonical");
    }

    if (b.blobs.size() != m.blobs.size()) bad_digest("blob set differs from manifest");
    for (const auto& h : m.blobs) {
        auto it = b.blobs.find(h);
        if (it == b.blobs.end()) bad_digest("blob " + h.hex() + " missing");
        if (sha256(it->second) != h) bad_digest("blob " + h.hex() + " does not match its hash");
    }
    if (sha256(canonical_dump(hints_json(b.hints))) != m.hints_digest) bad_digest("hints differ from manifest");
    if (sha256(canonical_dump(subs_json(b.subscriptions))) != m.subscriptions_digest) {
        bad_digest("subscriptions differ from manifest");
    }
    if (b.keys.has_value() != m.keys_digest.has_value() ||
        (b.keys && sha256(canonical_dump(*b.keys)) != *m.keys_digest)) {
        bad_digest("keys differ from manifest");
    }
}

void write_bundle(const ExportBundle& b, const fs::path& dir) {
    fs::create_directories(dir);
    write_file(dir / "manifest.json", canonical_dump(b.manifest.to_json()) + "\n");
    fs::create_directories(dir / "streams");
    for (const auto& [id, csl] : b.streams) write_file(dir / "streams" / (id.hex() + ".csl"), csl);
    for (const auto& [h, bytes] : b.blobs) {
        write_file(blob_path(dir, h), std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    }
    std::string hints;
    for (const auto& h : b.hints) hints += canonical_dump(h.to_json()) + "\n";
    write_file(dir / "hints.jsonl", hints);
    write_file(dir / "subscriptions.json", canonical_dump(subs_json(b.subscriptions)) + "\n");
    if (b.keys) {
        write_file(dir / "keys.json", canonical_dump(*b.keys) + "\n");
        fs::permissions(dir / "keys.json", fs::perms::owner_read | fs::perms::owner_write);
    }
}

ExportBundle read_bundle(const fs::path& dir) {
    ExportBundle b;
    try {
        b.manifest = ExportManifest::from_json(parse_json(read_text(dir / "manifest.json")));
        if (fs::exists(dir / "streams")) {
            for (const auto& de : fs::directory_iterator(dir / "streams")) {
                if (de.path().extension() != ".csl") continue;
                auto id = StreamId::from_hex(de.path().stem().string());
                if (!id) bad_digest("unexpected stream file " + de.path().filename().string());
                b.streams.emplace(*id, read_text(de.path()));
            }
        }
        for (const auto& h : b.manifest.blobs) {
            auto text = read_text(blob_path(dir, h));
            b.blobs.emplace(h, Bytes(text.begin(), text.end()));
        }
        auto hints = read_text(dir / "hints.jsonl");
        std::size_t pos = 0;
        while (pos < hints.size()) {
            auto nl = hints.find('\n', pos);
            if (nl == std::string::npos) bad_digest("hints.jsonl is truncated");
            b.hints.push_back(StorageHint::from_json(parse_json(hints.substr(pos, nl - pos))));
            pos = nl + 1;
        }
        for (const auto& s : parse_json(read_text(dir / "subscriptions.json"))) {
            b.subscriptions.push_back(SubscriptionSet::from_json(s));
        }
        if (fs::exists(dir / "keys.json")) b.keys = parse_json(read_text(dir / "keys.json"));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::BadDigest) throw;
        bad_digest(e.what());
    }
    verify_bundle(b);
    return b;
}

Json bundle_to_json(const ExportBundle& b) {
    Json streams = Json::object();
    for (const auto& [id, csl] : b.streams) streams[id.hex()] = csl;
    Json blobs = Json::object();
    for (const auto& [h, bytes] : b.blobs) blobs[h.hex()] = to_base64(bytes);
    Json j = {{"manifest", b.manifest.to_json()},
              {"streams", streams},
              {"blobs", blobs},
              {"hints", hints_json(b.hints)},
              {"subscriptions", subs_json(b.subscriptions)}};
    if (b.keys) j["keys"] = *b.keys;
    return j;
}

ExportBundle bundle_from_json(const Json& j) {
    ExportBundle b;
    try {
        b.manifest = ExportManifest::from_json(require(j, "manifest"));
        for (const auto& [k, v] : require(j, "streams").items()) {
            auto id = StreamId::from_hex(k);
            if (!id || !v.is_string()) bad_digest("bad stream entry " + k);
            b.streams.emplace(*id, v.get<std::string>());
        }
        for (const auto& [k, v] : require(j, "blobs").items()) {
            auto h = Digest::from_hex(k);
            auto bytes = v.is_string() ? from_base64(v.get<std::string>()) : std::nullopt;
            if (!h || !bytes) bad_digest("bad blob entry " + k);
            b.blobs.emplace(*h, std::move(*bytes));
        }
        for (const auto& h : require(j, "hints")) b.hints.push_back(StorageHint::from_json(h));
        for (const auto& s : require(j, "subscriptions")) b.subscriptions.push_back(SubscriptionSet::from_json(s));
        if (j.contains("keys")) b.keys = j.at("keys");
    } catch (const Error& e) {
        if (e.code() == ErrorCode::BadDigest) throw;
        bad_digest(e.what());
    }
    verify_bundle(b);
    return b;
}

Json MigrationConflict::to_json() const {
    Json j = {{"stream_id", stream.hex()}, {"reason", reason}};
    if (evidence) j["fork_evidence"] = fork_evidence_to_json(*evidence);
    return j;
}

Json MigrationReport::to_json() const {
    Json cs = Json::array();
    for (const auto& c : conflicts) cs.push_back(c.to_json());
    return {{"streams_imported", streams_imported},
            {"streams_skipped", streams_skipped},
            {"entries_imported", entries_imported},
            {"blobs_imported", blobs_imported},
            {"blobs_skipped", blobs_skipped},
            {"blobs_replicated", blobs_replicated},
            {"hints_issued", hints_issued},
            {"hints_imported", hints_imported},
            {"subscriptions_imported", subscriptions_imported},
            {"conflicts", cs},
            {"unresolved", digest_list(unresolved)},
            {"warnings", warnings}};
}

MigrationReport import_bundle(Node& node, const ExportBundle& bundle) {
    verify_bundle(bundle);
    std::lock_guard lock(node.migration_mutex());
    MigrationReport r;
    std::map<Digest, Attribution> attribution;

    for (const auto& [id, text] : bundle.streams) {
        auto csl = parse_csl(text);
        auto incoming = load_verified(csl.genesis, csl.entries);
        for (const auto& e : incoming.entries) {
            if (!is_inline_kind(e.payload_kind)) attribution.emplace(e.content_hash, Attribution{id, e.author.id()});
        }
        auto local = node.streams().get(id);
        if (!local) {
            node.streams().insert(incoming);
            ++r.streams_imported;
            r.entries_imported += incoming.entries.size();
            continue;
        }
        if (record_hash(local->genesis) != record_hash(incoming.genesis)) {
            r.conflicts.push_back({id, "genesis differs from local copy", std::nullopt});
            continue;
        }
        const auto common = std::min(local->entries.size(), incoming.entries.size());
        std::optional<std::size_t> diverge;
        for (std::size_t i = 0; i < common; ++i) {
            if (record_hash(local->entries[i]) != record_hash(incoming.entries[i])) {
                diverge = i;
                break;
            }
        }
        if (diverge) {
            auto ev = detect_fork(local->entries[*diverge], incoming.entries[*diverge]);
            r.conflicts.push_back({id, "divergent history at seq " + std::to_string(*diverge + 1), ev});
            continue;
        }
        if (incoming.entries.size() <= local->entries.size()) {
            ++r.streams_skipped;
            continue;
        }
        std::vector<ContentEntry> tail(incoming.entries.begin() + static_cast<std::ptrdiff_t>(common),
                                       incoming.entries.end());
        try {
            node.streams().append(id, tail);
            ++r.streams_imported;
            r.entries_imported += tail.size();
        } catch (const Error& e) {
            r.conflicts.push_back({id, std::string("cannot extend local copy: ") + e.what(), std::nullopt});
        }
    }

    auto store = node.primary_store();
    for (const auto& [h, bytes] : bundle.blobs) {
        try {
            if (store->contains(h)) {
                ++r.blobs_skipped;
                continue;
            }
            auto it = attribution.find(h);
            node.put_blob(bytes, it == attribution.end() ? Attribution{} : it->second);
            ++r.blobs_imported;
        } catch (const Error& e) {
            r.warnings.push_back("blob " + h.hex() + " not stored: " + e.what());
        }
    }
    for (const auto& h : bundle.manifest.missing_blobs) {
        r.warnings.push_back("blob " + h.hex() + " was unresolvable at export");
    }
    for (const auto& h : bundle.hints) {
        if (node.add_hint(h)) ++r.hints_imported;
    }
    for (const auto& s : bundle.subscriptions) {
        if (node.add_subscription(s)) ++r.subscriptions_imported;
    }
    if (bundle.keys) r.warnings.push_back("bundle carries key material; it was not installed");
    return r;
}

MigrationReport switch_provider(Node& node, const StreamId& stream, const std::string& old_store,
                                const std::string& new_store, const Keypair& issuer, std::int64_t now) {
    MigrationReport r;
    if (!node.streams().contains(stream)) throw Error(ErrorCode::NotFound, "no stream " + stream.hex());
    if (old_store == new_store) {
        r.warnings.push_back("old and new store are the same; nothing to do");
        return r;
    }
    auto to = node.stores().by_id(new_store);
    if (!to) throw Error(ErrorCode::NotFound, "no store '" + new_store + "'");
    if (!to->online()) throw Error(ErrorCode::Unavailable, "store '" + new_store + "' is unreachable");
    auto from = node.stores().by_id(old_store);

    std::lock_guard lock(node.migration_mutex());
    auto state = node.streams().get(stream);
    std::map<Digest, Digest> author_of;
    for (const auto& e : state->entries) {
        if (!is_inline_kind(e.payload_kind)) author_of.emplace(e.content_hash, e.author.id());
    }

    for (const auto& h : node.referenced_blobs(stream)) {
        bool present = false;
        try {
            present = to->contains(h);
        } catch (const Error&) {
        }
        if (!present) {
            std::optional<Bytes> bytes;
            if (from) {
                try {
                    if (auto blob = from->get(h)) bytes = std::move(blob->bytes);
                } catch (const Error&) {
                }
            }
            if (!bytes) bytes = node.resolve_blob(h);
            if (!bytes) {
                r.unresolved.push_back(h);
                r.warnings.push_back("blob " + h.hex() + " could not be fetched from any store");
                continue;
            }
            try {
                to->put(*bytes, Attribution{stream, author_of.at(h)});
                ++r.blobs_replicated;
            } catch (const Error& e) {
                r.unresolved.push_back(h);
                r.warnings.push_back("blob " + h.hex() + " not replicated: " + e.what());
                continue;
            }
        } else {
            ++r.blobs_skipped;
        }

        std::optional<Blob> copy;
        try {
            copy = to->get(h);
        } catch (const Error&) {
        }
        if (!copy || sha256(copy->bytes) != h) {
            r.unresolved.push_back(h);
            r.warnings.push_back("blob " + h.hex() + " failed verification at '" + new_store + "'; no hint issued");
            continue;
        }
        bool hinted = false;
        for (const auto& existing : node.hints_for(h)) {
            hinted |= existing.store_url == to->locator() && existing.issued_by == issuer.principal();
        }
        if (!hinted && node.add_hint(issue_hint(issuer, h, to->locator(), now))) ++r.hints_issued;
    }
    return r;
}

} // namespace plurinet

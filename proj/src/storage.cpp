#include "plurinet/storage.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "plurinet/http.hpp"

namespace plurinet {

namespace fs = std::filesystem;

namespace {

std::optional<Bytes> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void append_line(const fs::path& path, const std::string& line) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot append to " + path.string());
    out << line << '\n';
}

template <typename F>
void for_each_line(const fs::path& path, F&& f) {
    std::ifstream in(path, std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            f(parse_json(line));
        } catch (const Error&) {
            // torn trailing write; everything before it already applied
        }
    }
}

} // namespace

Json Attribution::to_json() const {
    Json j = Json::object();
    if (stream) j["stream"] = stream->hex();
    if (author) j["author"] = "ed25519:" + author->hex();
    return j;
}

Attribution Attribution::from_json(const Json& j) {
    Attribution a;
    if (j.contains("stream")) {
        auto sid = StreamId::from_hex(require_string(j, "stream"));
        if (!sid) throw Error(ErrorCode::InvalidArgument, "malformed attribution stream");
        a.stream = *sid;
    }
    if (j.contains("author")) {
        auto id = Principal::parse_encoded_id(require_string(j, "author"));
        if (!id) throw Error(ErrorCode::InvalidArgument, "malformed attribution author");
        a.author = *id;
    }
    return a;
}

std::string RefusalTarget::encode() const {
    switch (kind) {
    case Kind::ContentHash: return "sha256:" + value.hex();
    case Kind::Stream: return "stream:" + value.hex();
    case Kind::Principal: return "ed25519:" + value.hex();
    }
    return {};
}

std::optional<RefusalTarget> RefusalTarget::parse(std::string_view text) {
    auto parse_with = [&](std::string_view prefix, Kind kind) -> std::optional<RefusalTarget> {
        auto d = Digest::from_hex(text.substr(prefix.size()));
        if (!d || d->hex() != text.substr(prefix.size())) return std::nullopt;
        return RefusalTarget{kind, *d};
    };
    if (text.starts_with("sha256:")) return parse_with("sha256:", Kind::ContentHash);
    if (text.starts_with("stream:")) return parse_with("stream:", Kind::Stream);
    if (text.starts_with("ed25519:")) return parse_with("ed25519:", Kind::Principal);
    return std::nullopt;
}

std::string_view to_string(StoreBackend b) {
    switch (b) {
    case StoreBackend::Memory: return "MEMORY";
    case StoreBackend::Filesystem: return "FILESYSTEM";
    case StoreBackend::Remote: return "REMOTE";
    }
    return "MEMORY";
}

std::optional<StoreBackend> parse_store_backend(std::string_view text) {
    for (auto b : {StoreBackend::Memory, StoreBackend::Filesystem, StoreBackend::Remote}) {
        if (to_string(b) == text) return b;
    }
    return std::nullopt;
}

Json BlobStoreConfig::to_json() const {
    Json refused = Json::array();
    for (const auto& r : refusal) refused.push_back(r.encode());
    return Json{{"backend", std::string(plurinet::to_string(backend))},
                {"location", location},
                {"refusal", refused},
                {"store_id", store_id}};
}

BlobStoreConfig BlobStoreConfig::from_json(const Json& j) {
    static const std::set<std::string> known = {"backend", "location", "refusal", "store_id"};
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw Error(ErrorCode::ConfigError, "unknown store config key '" + key + "'");
    }
    BlobStoreConfig c;
    c.store_id = require_string(j, "store_id");
    auto backend = parse_store_backend(require_string(j, "backend"));
    if (!backend) throw Error(ErrorCode::ConfigError, "unknown store backend for '" + c.store_id + "'");
    c.backend = *backend;
    if (j.contains("location")) c.location = require_string(j, "location");
    if (j.contains("refusal")) {
        for (const auto& r : j.at("refusal")) {
            auto t = r.is_string() ? RefusalTarget::parse(r.get<std::string>()) : std::nullopt;
            if (!t) throw Error(ErrorCode::ConfigError, "malformed refusal target in store '" + c.store_id + "'");
            c.refusal.push_back(*t);
        }
    }
    return c;
}

void BlobStore::check_online() const {
    if (!online_) throw Error(ErrorCode::Unavailable, "store '" + id_ + "' is offline");
}

Attribution BlobStore::attribution_of(const Digest& hash) const {
    auto it = attributions_.find(hash);
    return it == attributions_.end() ? Attribution{} : it->second;
}

bool BlobStore::is_refused(const Digest& hash, const Attribution& attr) const {
    using K = RefusalTarget::Kind;
    if (refusals_.contains({K::ContentHash, hash})) return true;
    auto check = [&](const Attribution& a) {
        return (a.stream && refusals_.contains({K::Stream, a.stream->value})) ||
               (a.author && refusals_.contains({K::Principal, *a.author}));
    };
    return check(attr) || check(attribution_of(hash));
}

std::set<RefusalTarget> BlobStore::refusals() const {
    std::shared_lock lock(mutex_);
    return refusals_;
}

Digest BlobStore::put(ByteView bytes, const Attribution& attr) {
    check_online();
    const Digest hash = sha256(bytes);
    std::unique_lock lock(mutex_);
    if (is_refused(hash, attr)) {
        throw Error(ErrorCode::Refused, "store '" + id() + "' refuses " + hash.hex());
    }
    if (!has_blob(hash)) write_blob(hash, bytes);
    if (attr.stream || attr.author) {
        auto& known = attributions_[hash];
        if (!known.stream) known.stream = attr.stream;
        if (!known.author) known.author = attr.author;
        persist_attribution(hash, known);
    }
    return hash;
}

std::optional<Blob> BlobStore::get(const Digest& hash) {
    check_online();
    std::shared_lock lock(mutex_);
    if (is_refused(hash, {})) return std::nullopt;
    auto bytes = read_blob(hash);
    if (!bytes) return std::nullopt;
    if (sha256(*bytes) != hash) {
        throw Error(ErrorCode::IntegrityFailure, "store '" + id() + "' returned corrupt bytes for " + hash.hex());
    }
    return Blob{std::move(*bytes), hash};
}

bool BlobStore::contains(const Digest& hash) {
    check_online();
    std::shared_lock lock(mutex_);
    return !is_refused(hash, {}) && has_blob(hash);
}

void BlobStore::refuse(const RefusalTarget& target) {
    check_online();
    std::unique_lock lock(mutex_);
    if (!refusals_.insert(target).second) return;
    persist_refusal(target);
    for (const auto& h : list_blobs()) {
        if (is_refused(h, {})) erase_blob(h);
    }
}

std::vector<Digest> BlobStore::list() {
    check_online();
    std::shared_lock lock(mutex_);
    return list_blobs();
}

bool BlobStore::remove(const Digest& hash) {
    check_online();
    std::unique_lock lock(mutex_);
    return erase_blob(hash);
}

// ---- memory ----

void MemoryBlobStore::corrupt(const Digest& hash, Bytes bytes) {
    std::unique_lock lock(mutex_);
    blobs_[hash] = std::move(bytes);
}

void MemoryBlobStore::write_blob(const Digest& hash, ByteView bytes) {
    blobs_.emplace(hash, Bytes(bytes.begin(), bytes.end()));
}

std::optional<Bytes> MemoryBlobStore::read_blob(const Digest& hash) {
    auto it = blobs_.find(hash);
    if (it == blobs_.end()) return std::nullopt;
    return it->second;
}

bool MemoryBlobStore::has_blob(const Digest& hash) { return blobs_.contains(hash); }
bool MemoryBlobStore::erase_blob(const Digest& hash) { return blobs_.erase(hash) > 0; }

std::vector<Digest> MemoryBlobStore::list_blobs() {
    std::vector<Digest> out;
    for (const auto& [h, _] : blobs_) out.push_back(h);
    return out;
}

// ---- filesystem ----

FilesystemBlobStore::FilesystemBlobStore(std::string id, fs::path root)
    : BlobStore(std::move(id)), root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create store root " + root_.string() + ": " + ec.message());
    for_each_line(root_ / "refusals.jsonl", [&](const Json& j) {
        if (auto t = RefusalTarget::parse(require_string(j, "target"))) refusals_.insert(*t);
    });
    for_each_line(root_ / "attributions.jsonl", [&](const Json& j) {
        auto h = Digest::from_hex(require_string(j, "content_hash"));
        if (h) attributions_[*h] = Attribution::from_json(require(j, "attribution"));
    });
}

fs::path FilesystemBlobStore::path_for(const Digest& hash) const {
    auto hex = hash.hex();
    return root_ / hex.substr(0, 2) / hex.substr(2);
}

void FilesystemBlobStore::write_blob(const Digest& hash, ByteView bytes) {
    auto path = path_for(hash);
    fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "rename failed for " + path.string());
}

std::optional<Bytes> FilesystemBlobStore::read_blob(const Digest& hash) { return read_file(path_for(hash)); }

bool FilesystemBlobStore::has_blob(const Digest& hash) { return fs::exists(path_for(hash)); }

bool FilesystemBlobStore::erase_blob(const Digest& hash) {
    std::error_code ec;
    return fs::remove(path_for(hash), ec);
}

std::vector<Digest> FilesystemBlobStore::list_blobs() {
    std::vector<Digest> out;
    for (const auto& dir : fs::directory_iterator(root_)) {
        if (!dir.is_directory() || dir.path().filename().string().size() != 2) continue;
        for (const auto& f : fs::directory_iterator(dir.path())) {
            auto name = dir.path().filename().string() + f.path().filename().string();
            if (auto d = Digest::from_hex(name); d && d->hex() == name) out.push_back(*d);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

void FilesystemBlobStore::persist_refusal(const RefusalTarget& t) {
    std::lock_guard lock(file_mutex_);
    append_line(root_ / "refusals.jsonl", canonical_dump(Json{{"target", t.encode()}}));
}

void FilesystemBlobStore::persist_attribution(const Digest& hash, const Attribution& attr) {
    std::lock_guard lock(file_mutex_);
    append_line(root_ / "attributions.jsonl",
                canonical_dump(Json{{"attribution", attr.to_json()}, {"content_hash", hash.hex()}}));
}

// ---- remote ----

RemoteBlobStore::RemoteBlobStore(std::string id, std::string base_url)
    : BlobStore(std::move(id)), base_url_(std::move(base_url)) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
    if (!http::Endpoint::parse(base_url_)) {
        throw Error(ErrorCode::ConfigError, "remote store URL must be http://host:port, got '" + base_url_ + "'");
    }
}

Digest RemoteBlobStore::put(ByteView bytes, const Attribution& attr) {
    check_online();
    const Digest hash = sha256(bytes);
    {
        std::shared_lock lock(mutex_);
        if (is_refused(hash, attr)) throw Error(ErrorCode::Refused, "store '" + id() + "' refuses " + hash.hex());
    }
    std::string query;
    if (attr.stream) query += "stream=" + attr.stream->hex();
    if (attr.author) query += std::string(query.empty() ? "" : "&") + "author=ed25519:" + attr.author->hex();
    auto ep = *http::Endpoint::parse(base_url_);
    auto res = http::post(ep, "/blobs" + (query.empty() ? "" : "?" + query),
                          std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                          "application/octet-stream");
    if (!res) throw Error(ErrorCode::Unavailable, "remote store " + base_url_ + " unreachable");
    if (res->status == 403) throw Error(ErrorCode::Refused, "remote store " + base_url_ + " refused " + hash.hex());
    if (res->status != 200) {
        throw Error(ErrorCode::IoFailure, "remote store put failed with HTTP " + std::to_string(res->status));
    }
    return hash;
}

void RemoteBlobStore::write_blob(const Digest&, ByteView bytes) { put(bytes); }

std::optional<Bytes> RemoteBlobStore::read_blob(const Digest& hash) {
    auto ep = *http::Endpoint::parse(base_url_);
    auto res = http::get(ep, "/blobs/" + hash.hex());
    if (!res) throw Error(ErrorCode::Unavailable, "remote store " + base_url_ + " unreachable");
    if (res->status == 404 || res->status == 403) return std::nullopt;
    if (res->status != 200) {
        throw Error(ErrorCode::IoFailure, "remote store get failed with HTTP " + std::to_string(res->status));
    }
    return Bytes(res->body.begin(), res->body.end());
}

bool RemoteBlobStore::has_blob(const Digest& hash) { return read_blob(hash).has_value(); }

bool RemoteBlobStore::erase_blob(const Digest&) {
    throw Error(ErrorCode::InvalidArgument, "remote stores cannot be modified from a client");
}

std::vector<Digest> RemoteBlobStore::list_blobs() { return {}; }

std::shared_ptr<BlobStore> open_store(const BlobStoreConfig& config) {
    std::shared_ptr<BlobStore> store;
    switch (config.backend) {
    case StoreBackend::Memory: store = std::make_shared<MemoryBlobStore>(config.store_id); break;
    case StoreBackend::Filesystem:
        if (config.location.empty()) {
            throw Error(ErrorCode::ConfigError, "filesystem store '" + config.store_id + "' needs a location");
        }
        store = std::make_shared<FilesystemBlobStore>(config.store_id, config.location);
        break;
    case StoreBackend::Remote: store = std::make_shared<RemoteBlobStore>(config.store_id, config.location); break;
    }
    for (const auto& r : config.refusal) store->refuse(r);
    return store;
}

// ---- hints ----

Json StorageHint::to_json(bool with_signature) const {
    Json j{{"content_hash", content_hash.hex()},
           {"issued_at", issued_at},
           {"issued_by", issued_by.public_key_hex()},
           {"store_url", store_url}};
    if (with_signature) j["signature"] = signature.hex();
    return j;
}

StorageHint StorageHint::from_json(const Json& j) {
    StorageHint h;
    auto hash = Digest::from_hex(require_string(j, "content_hash"));
    auto issuer = Principal::from_public_key_hex(require_string(j, "issued_by"));
    auto sig = Signature::from_hex(require_string(j, "signature"));
    if (!hash || !issuer || !sig) throw Error(ErrorCode::InvalidArgument, "malformed storage hint");
    h.content_hash = *hash;
    h.issued_by = *issuer;
    h.signature = *sig;
    h.issued_at = require_int(j, "issued_at");
    h.store_url = require_string(j, "store_url");
    return h;
}

StorageHint issue_hint(const Keypair& issuer, const Digest& content_hash, std::string store_url,
                       std::int64_t issued_at) {
    StorageHint h{content_hash, std::move(store_url), issuer.principal(), issued_at, {}};
    h.signature = issuer.sign(canonical_dump(h.to_json(false)));
    return h;
}

bool verify_hint(const StorageHint& hint) {
    return verify(hint.issued_by, canonical_dump(hint.to_json(false)), hint.signature);
}

void StoreSet::add(std::shared_ptr<BlobStore> store) {
    std::erase_if(stores_, [&](const auto& s) { return s->id() == store->id(); });
    stores_.push_back(std::move(store));
}

std::shared_ptr<BlobStore> StoreSet::by_id(const std::string& id) const {
    for (const auto& s : stores_) {
        if (s->id() == id) return s;
    }
    return nullptr;
}

std::shared_ptr<BlobStore> StoreSet::by_locator(const std::string& locator) const {
    for (const auto& s : stores_) {
        if (s->locator() == locator) return s;
    }
    return nullptr;
}

std::optional<Blob> resolve(const Digest& hash, std::span<const StorageHint> hints, const StoreSet& stores) {
    std::vector<const StorageHint*> ordered;
    for (const auto& h : hints) {
        if (h.content_hash == hash && verify_hint(h)) ordered.push_back(&h);
    }
    std::stable_sort(ordered.begin(), ordered.end(), [](const StorageHint* a, const StorageHint* b) {
        if (a->issued_at != b->issued_at) return a->issued_at > b->issued_at;
        return a->store_url < b->store_url;
    });

    auto attempt = [&](BlobStore& store) -> std::optional<Blob> {
        try {
            return store.get(hash);
        } catch (const Error&) {
            return std::nullopt; // dead or corrupt provider is a miss, not a failure
        }
    };

    for (const auto* h : ordered) {
        auto store = stores.by_locator(h->store_url);
        if (!store && h->store_url.starts_with("http://")) {
            try {
                store = std::make_shared<RemoteBlobStore>("hint", h->store_url);
            } catch (const Error&) {
                continue;
            }
        }
        if (!store) continue;
        if (auto blob = attempt(*store)) return blob;
    }
    for (const auto& store : stores.all()) {
        if (auto blob = attempt(*store)) return blob;
    }
    return std::nullopt;
}

bool replicate(const Digest& hash, BlobStore& from, BlobStore& to) {
    if (to.contains(hash)) return false;
    auto blob = from.get(hash);
    if (!blob) throw Error(ErrorCode::NotFound, "source store '" + from.id() + "' lacks " + hash.hex());
    to.put(blob->bytes);
    return true;
}

std::size_t collect_garbage(BlobStore& store, const std::set<Digest>& referenced) {
    std::size_t removed = 0;
    for (const auto& h : store.list()) {
        if (!referenced.contains(h) && store.remove(h)) ++removed;
    }
    return removed;
}

} // namespace plurinet

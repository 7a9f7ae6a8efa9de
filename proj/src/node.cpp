#include "plurinet/node.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <sys/stat.h>

namespace plurinet {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_atomic(const fs::path& p, const std::string& text) {
    auto tmp = p;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << text;
        if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + tmp.string());
    }
    fs::rename(tmp, p);
}

Keypair load_or_create_key(const fs::path& dir) {
    const auto path = dir / "node.key";
    if (fs::exists(path)) {
        try {
            auto j = parse_json(read_text(path));
            auto seed = from_hex(require_string(j, "seed"));
            if (!seed) throw Error(ErrorCode::InvalidArgument, "bad seed");
            return Keypair::from_seed(*seed);
        } catch (const Error& e) {
            throw Error(ErrorCode::IntegrityFailure, "unreadable node key " + path.string() + ": " + e.what());
        }
    }
    auto kp = Keypair::generate();
    write_atomic(path, canonical_dump(Json{{"seed", to_hex(kp.secret_seed())},
                                           {"public_key", kp.principal().public_key_hex()}}) + "\n");
    ::chmod(path.c_str(), 0600);
    return kp;
}

fs::path prepare_dir(const NodeConfig& cfg) {
    if (cfg.data_dir.empty()) throw Error(ErrorCode::ConfigError, "data_dir is not set");
    std::error_code ec;
    fs::create_directories(cfg.data_dir, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create data_dir " + cfg.data_dir.string() + ": " + ec.message());
    return cfg.data_dir;
}

BlobStoreConfig anchored(BlobStoreConfig c, const fs::path& dir) {
    if (c.backend == StoreBackend::Filesystem && !c.location.empty() && fs::path(c.location).is_relative()) {
        c.location = (dir / c.location).string();
    }
    return c;
}

} // namespace

Node::Node(NodeConfig config)
    : config_(std::move(config)), key_(load_or_create_key(prepare_dir(config_))) {
    const auto& dir = config_.data_dir;
    streams_ = std::make_unique<StreamStore>(dir / "streams");

    if (config_.stores.empty()) {
        stores_.add(std::make_shared<FilesystemBlobStore>("local", dir / "blobs"));
    } else {
        for (const auto& c : config_.stores) stores_.add(open_store(anchored(c, dir)));
    }
    if (fs::exists(dir / "stores.json")) {
        try {
            for (const auto& c : parse_json(read_text(dir / "stores.json"))) {
                runtime_stores_.push_back(BlobStoreConfig::from_json(c));
                stores_.add(open_store(anchored(runtime_stores_.back(), dir)));
            }
        } catch (const Error& e) {
            throw Error(ErrorCode::IntegrityFailure, "corrupt stores.json: " + std::string(e.what()));
        }
    }

    if (fs::exists(dir / "hints.jsonl")) {
        auto text = read_text(dir / "hints.jsonl");
        std::size_t pos = 0;
        while (pos < text.size()) {
            auto nl = text.find('\n', pos);
            if (nl == std::string::npos) break; // torn final line
            auto line = text.substr(pos, nl - pos);
            pos = nl + 1;
            try {
                auto h = StorageHint::from_json(parse_json(line));
                if (verify_hint(h)) hints_.push_back(std::move(h));
            } catch (const Error&) {
                // advisory data; a bad line only loses a locator
            }
        }
    }
    if (fs::exists(dir / "subscriptions.json")) {
        try {
            for (const auto& s : parse_json(read_text(dir / "subscriptions.json"))) {
                subscriptions_.push_back(SubscriptionSet::from_json(s));
            }
        } catch (const Error& e) {
            throw Error(ErrorCode::IntegrityFailure, "corrupt subscriptions.json: " + std::string(e.what()));
        }
    }
}

std::shared_ptr<BlobStore> Node::add_store(const BlobStoreConfig& cfg) {
    std::lock_guard lock(state_mutex_);
    if (stores_.by_id(cfg.store_id)) throw Error(ErrorCode::InvalidArgument, "store '" + cfg.store_id + "' already exists");
    auto store = open_store(anchored(cfg, config_.data_dir));
    stores_.add(store);
    runtime_stores_.push_back(cfg);
    persist_runtime_stores();
    ++blob_version_;
    return store;
}

void Node::persist_runtime_stores() {
    Json arr = Json::array();
    for (const auto& c : runtime_stores_) arr.push_back(c.to_json());
    write_atomic(config_.data_dir / "stores.json", canonical_dump(arr) + "\n");
}

Digest Node::put_blob(ByteView bytes, const Attribution& attr) {
    auto h = primary_store()->put(bytes, attr);
    std::lock_guard lock(state_mutex_);
    ++blob_version_;
    return h;
}

std::optional<Bytes> Node::resolve_blob(const Digest& hash) const {
    auto hs = hints_for(hash);
    auto blob = resolve(hash, hs, stores_);
    if (!blob) return std::nullopt;
    return std::move(blob->bytes);
}

BlobResolver Node::resolver() const {
    return [this](const Digest& h) { return resolve_blob(h); };
}

bool Node::add_hint(const StorageHint& hint) {
    if (!verify_hint(hint)) return false;
    std::lock_guard lock(state_mutex_);
    for (const auto& h : hints_) {
        if (h == hint) return false;
    }
    hints_.push_back(hint);
    persist_hints_line(hint);
    ++blob_version_;
    return true;
}

void Node::persist_hints_line(const StorageHint& h) {
    std::ofstream out(config_.data_dir / "hints.jsonl", std::ios::binary | std::ios::app);
    out << canonical_dump(h.to_json()) << '\n';
    if (!out) throw Error(ErrorCode::IoFailure, "cannot append to hints.jsonl");
}

std::vector<StorageHint> Node::hints() const {
    std::lock_guard lock(state_mutex_);
    return hints_;
}

std::vector<StorageHint> Node::hints_for(const Digest& hash) const {
    std::lock_guard lock(state_mutex_);
    std::vector<StorageHint> out;
    for (const auto& h : hints_) {
        if (h.content_hash == hash) out.push_back(h);
    }
    return out;
}

std::vector<SubscriptionSet> Node::subscriptions() const {
    std::lock_guard lock(state_mutex_);
    return subscriptions_;
}

bool Node::add_subscription(const SubscriptionSet& subs) {
    subs.validate();
    std::lock_guard lock(state_mutex_);
    const auto text = canonical_dump(subs.to_json());
    for (const auto& s : subscriptions_) {
        if (canonical_dump(s.to_json()) == text) return false;
    }
    subscriptions_.push_back(subs);
    persist_subscriptions();
    return true;
}

void Node::persist_subscriptions() {
    Json arr = Json::array();
    for (const auto& s : subscriptions_) arr.push_back(s.to_json());
    write_atomic(config_.data_dir / "subscriptions.json", canonical_dump(arr) + "\n");
}

std::optional<ForumConfig> Node::forum(const std::string& forum_id) const {
    for (const auto& f : config_.forums) {
        if (f.forum_id != forum_id) continue;
        ForumConfig out = f;
        for (const auto& a : config_.default_mod_streams) {
            auto same = [&](const AuthorityStream& x) { return x.stream == a.stream; };
            auto it = std::find_if(out.authority_streams.begin(), out.authority_streams.end(), same);
            if (it == out.authority_streams.end()) {
                out.authority_streams.push_back(a);
            } else {
                it->locked = it->locked || a.locked;
            }
        }
        return out;
    }
    return std::nullopt;
}

std::shared_ptr<const ContentIndex> Node::index() {
    std::lock_guard lock(index_mutex_);
    const auto sv = streams_->version();
    std::uint64_t bv;
    {
        std::lock_guard s(state_mutex_);
        bv = blob_version_;
    }
    if (index_ && sv == indexed_stream_version_ && bv == indexed_blob_version_) return index_;
    auto next = index_ ? std::make_shared<ContentIndex>(*index_) : std::make_shared<ContentIndex>();
    const auto blobs = resolver();
    for (const auto& s : streams_->all()) next->ingest(*s, blobs);
    index_ = std::move(next);
    indexed_stream_version_ = sv;
    indexed_blob_version_ = bv;
    return index_;
}

std::shared_ptr<const ContentIndex> Node::rebuild_index() {
    {
        std::lock_guard lock(index_mutex_);
        index_.reset();
    }
    return index();
}

std::vector<Digest> Node::referenced_blobs(const StreamId& stream) const {
    std::vector<Digest> out;
    auto s = streams_->get(stream);
    if (!s) return out;
    std::set<Digest> seen;
    for (const auto& e : s->entries) {
        if (is_inline_kind(e.payload_kind)) continue;
        if (seen.insert(e.content_hash).second) out.push_back(e.content_hash);
    }
    return out;
}

std::size_t Node::collect_garbage() {
    std::set<Digest> referenced;
    for (const auto& id : streams_->ids()) {
        for (const auto& h : referenced_blobs(id)) referenced.insert(h);
    }
    auto n = plurinet::collect_garbage(*primary_store(), referenced);
    std::lock_guard lock(state_mutex_);
    ++blob_version_;
    return n;
}

} // namespace plurinet

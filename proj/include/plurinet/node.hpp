#pragma once

// A node bundles what one operator runs: the stream store, blob stores and
// storage hints, the aggregator index and the configured forums. Roles
// (store, aggregator, peer) differ only by configuration.

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "plurinet/aggregator.hpp"
#include "plurinet/storage.hpp"
#include "plurinet/sync.hpp"

namespace plurinet {

struct NodeConfig {
    std::filesystem::path data_dir;
    std::string listen_addr = "127.0.0.1:8080";
    std::vector<BlobStoreConfig> stores;
    std::vector<ForumConfig> forums;
    std::vector<AuthorityStream> default_mod_streams;
    std::vector<PeerAddress> peers;
    std::optional<std::string> admin_token; // required on /admin/ routes when set

    Json to_json() const;
    /// Throws ConfigError naming the first unknown or malformed key.
    static NodeConfig from_json(const Json& j);
};

NodeConfig load_node_config(const std::filesystem::path& path);

/// Resolves the effective config: an explicit path, else PLURINET_CONFIG,
/// else defaults. PLURINET_DATA_DIR (or `data_dir_override`) replaces data_dir.
NodeConfig resolve_node_config(const std::optional<std::filesystem::path>& path,
                               const std::optional<std::filesystem::path>& data_dir_override = {});

class Node {
public:
    /// Opens or initialises data_dir. Refuses to start (IntegrityFailure)
    /// when a stream file is corrupt beyond a torn final line.
    explicit Node(NodeConfig config);

    Node(const Node&) = delete;
    Node& operator=(const Node&) = delete;

    const NodeConfig& config() const { return config_; }
    const Keypair& key() const { return key_; }
    StreamStore& streams() { return *streams_; }
    const StreamStore& streams() const { return *streams_; }
    const StoreSet& stores() const { return stores_; }
    /// Where new blobs go: the first configured store, else `<data_dir>/blobs`.
    std::shared_ptr<BlobStore> primary_store() const { return stores_.all().front(); }
    /// Adds a store at runtime and records it in `<data_dir>/stores.json`.
    std::shared_ptr<BlobStore> add_store(const BlobStoreConfig& cfg);

    Digest put_blob(ByteView bytes, const Attribution& attr = {});
    std::optional<Bytes> resolve_blob(const Digest& hash) const;
    BlobResolver resolver() const;

    /// Verified hints only; duplicates are ignored. Returns true if stored.
    bool add_hint(const StorageHint& hint);
    std::vector<StorageHint> hints() const;
    std::vector<StorageHint> hints_for(const Digest& hash) const;

    std::vector<SubscriptionSet> subscriptions() const;
    /// Returns false if an identical set is already stored.
    bool add_subscription(const SubscriptionSet& subs);

    /// Forum config with the node's default moderation streams appended as
    /// authority streams.
    std::optional<ForumConfig> forum(const std::string& forum_id) const;

    /// Index over every stored stream, refreshed incrementally when streams
    /// or blobs change.
    std::shared_ptr<const ContentIndex> index();
    /// Drops the cached index and re-ingests everything from scratch.
    std::shared_ptr<const ContentIndex> rebuild_index();

    /// Blobs referenced by non-inline entries of the stream.
    std::vector<Digest> referenced_blobs(const StreamId& stream) const;
    /// Removes blobs no stored stream references from the primary store.
    std::size_t collect_garbage();

    /// Held by import and switch_provider; one migration at a time.
    std::mutex& migration_mutex() { return migration_mutex_; }

    const std::filesystem::path& data_dir() const { return config_.data_dir; }

private:
    void persist_hints_line(const StorageHint& h);
    void persist_subscriptions();
    void persist_runtime_stores();

    NodeConfig config_;
    Keypair key_;
    std::unique_ptr<StreamStore> streams_;
    StoreSet stores_;
    std::vector<BlobStoreConfig> runtime_stores_;

    mutable std::mutex state_mutex_;
    std::vector<StorageHint> hints_;
    std::vector<SubscriptionSet> subscriptions_;
    std::uint64_t blob_version_ = 0;

    std::mutex index_mutex_;
    std::shared_ptr<const ContentIndex> index_;
    std::uint64_t indexed_stream_version_ = ~0ull;
    std::uint64_t indexed_blob_version_ = ~0ull;

    std::mutex migration_mutex_;
};

} // namespace plurinet

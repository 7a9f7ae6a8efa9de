#pragma once

// Content-addressed blob storage. Stores are user controlled and replaceable;
// entries never point at a store directly. StorageHints are signed, advisory
// locators that can be reissued whenever content moves.

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "plurinet/content_stream.hpp"

namespace plurinet {

struct Blob {
    Bytes bytes;
    Digest hash;
};

/// Optional metadata supplied at put time so stream and principal refusals
/// can apply. Unattributed blobs are refusable by hash only.
struct Attribution {
    std::optional<StreamId> stream;
    std::optional<Digest> author; // principal id

    Json to_json() const;
    static Attribution from_json(const Json& j);
};

/// Something a store operator can refuse. Encoded as `sha256:<hex>`,
/// `stream:<hex>` or `ed25519:<principal id>`.
struct RefusalTarget {
    enum class Kind { ContentHash, Stream, Principal };
    Kind kind = Kind::ContentHash;
    Digest value;

    std::string encode() const;
    static std::optional<RefusalTarget> parse(std::string_view text);

    auto operator<=>(const RefusalTarget&) const = default;
};

enum class StoreBackend { Memory, Filesystem, Remote };
std::string_view to_string(StoreBackend b);
std::optional<StoreBackend> parse_store_backend(std::string_view text);

struct BlobStoreConfig {
    std::string store_id;
    StoreBackend backend = StoreBackend::Memory;
    std::string location; // directory for FILESYSTEM, base URL for REMOTE
    std::vector<RefusalTarget> refusal;

    Json to_json() const;
    static BlobStoreConfig from_json(const Json& j);
};

class BlobStore {
public:
    explicit BlobStore(std::string id) : id_(std::move(id)) {}
    virtual ~BlobStore() = default;
    BlobStore(const BlobStore&) = delete;
    BlobStore& operator=(const BlobStore&) = delete;

    const std::string& id() const { return id_; }
    /// Location token that StorageHints point at.
    virtual std::string locator() const = 0;
    virtual StoreBackend backend() const = 0;

    /// Throws Refused if the hash or attribution is refused; Unavailable when offline.
    virtual Digest put(ByteView bytes, const Attribution& attr = {});
    /// Refused or missing blobs yield nullopt. Bytes that do not hash to
    /// `hash` throw IntegrityFailure.
    virtual std::optional<Blob> get(const Digest& hash);
    virtual bool contains(const Digest& hash);
    /// Adds the target to the refusal set and deletes matching blobs here.
    virtual void refuse(const RefusalTarget& target);
    virtual std::vector<Digest> list();
    virtual bool remove(const Digest& hash);

    std::set<RefusalTarget> refusals() const;
    bool is_refused(const Digest& hash, const Attribution& attr) const;

    /// Simulates provider death: an offline store throws Unavailable on every call.
    void set_online(bool online) { online_ = online; }
    bool online() const { return online_; }

protected:
    virtual void write_blob(const Digest& hash, ByteView bytes) = 0;
    virtual std::optional<Bytes> read_blob(const Digest& hash) = 0;
    virtual bool has_blob(const Digest& hash) = 0;
    virtual bool erase_blob(const Digest& hash) = 0;
    virtual std::vector<Digest> list_blobs() = 0;
    virtual void persist_refusal(const RefusalTarget&) {}
    virtual void persist_attribution(const Digest&, const Attribution&) {}

    void check_online() const;
    Attribution attribution_of(const Digest& hash) const;

    mutable std::shared_mutex mutex_;
    std::set<RefusalTarget> refusals_;
    std::map<Digest, Attribution> attributions_;

private:
    std::string id_;
    std::atomic<bool> online_{true};
};

class MemoryBlobStore final : public BlobStore {
public:
    explicit MemoryBlobStore(std::string id) : BlobStore(std::move(id)) {}
    std::string locator() const override { return "mem:" + id(); }
    StoreBackend backend() const override { return StoreBackend::Memory; }

    /// Test hook: overwrite stored bytes without rehashing.
    void corrupt(const Digest& hash, Bytes bytes);

protected:
    void write_blob(const Digest& hash, ByteView bytes) override;
    std::optional<Bytes> read_blob(const Digest& hash) override;
    bool has_blob(const Digest& hash) override;
    bool erase_blob(const Digest& hash) override;
    std::vector<Digest> list_blobs() override;

private:
    std::map<Digest, Bytes> blobs_;
};

/// Layout: `<root>/<hh>/<rest-of-hash>`, refusals in `<root>/refusals.jsonl`,
/// attributions in `<root>/attributions.jsonl`.
class FilesystemBlobStore final : public BlobStore {
public:
    FilesystemBlobStore(std::string id, std::filesystem::path root);
    std::string locator() const override { return "file:" + root_.string(); }
    StoreBackend backend() const override { return StoreBackend::Filesystem; }

    std::filesystem::path path_for(const Digest& hash) const;
    const std::filesystem::path& root() const { return root_; }

protected:
    void write_blob(const Digest& hash, ByteView bytes) override;
    std::optional<Bytes> read_blob(const Digest& hash) override;
    bool has_blob(const Digest& hash) override;
    bool erase_blob(const Digest& hash) override;
    std::vector<Digest> list_blobs() override;
    void persist_refusal(const RefusalTarget& t) override;
    void persist_attribution(const Digest& hash, const Attribution& attr) override;

private:
    std::filesystem::path root_;
    std::mutex file_mutex_;
};

/// A peer node's `/blobs/` endpoints. Refusals are the remote operator's;
/// refuse() here only stops this client from fetching or uploading.
class RemoteBlobStore final : public BlobStore {
public:
    RemoteBlobStore(std::string id, std::string base_url);
    std::string locator() const override { return base_url_; }
    StoreBackend backend() const override { return StoreBackend::Remote; }

    Digest put(ByteView bytes, const Attribution& attr = {}) override;

protected:
    void write_blob(const Digest& hash, ByteView bytes) override;
    std::optional<Bytes> read_blob(const Digest& hash) override;
    bool has_blob(const Digest& hash) override;
    bool erase_blob(const Digest& hash) override;
    std::vector<Digest> list_blobs() override;

private:
    std::string base_url_;
};

std::shared_ptr<BlobStore> open_store(const BlobStoreConfig& config);

struct StorageHint {
    Digest content_hash;
    std::string store_url;
    Principal issued_by;
    std::int64_t issued_at = 0;
    Signature signature;

    Json to_json(bool with_signature = true) const;
    static StorageHint from_json(const Json& j);
    bool operator==(const StorageHint& o) const { return to_json() == o.to_json(); }
};

StorageHint issue_hint(const Keypair& issuer, const Digest& content_hash, std::string store_url,
                       std::int64_t issued_at);
bool verify_hint(const StorageHint& hint);

/// The set of stores reachable from this node, addressable by locator.
class StoreSet {
public:
    void add(std::shared_ptr<BlobStore> store);
    std::shared_ptr<BlobStore> by_id(const std::string& id) const;
    std::shared_ptr<BlobStore> by_locator(const std::string& locator) const;
    const std::vector<std::shared_ptr<BlobStore>>& all() const { return stores_; }

private:
    std::vector<std::shared_ptr<BlobStore>> stores_;
};

/// Tries verified hints newest first, then every store in `fallback` order.
/// The first blob whose bytes hash to `hash` wins; failures are misses.
std::optional<Blob> resolve(const Digest& hash, std::span<const StorageHint> hints, const StoreSet& stores);

/// Copies a blob between stores; a no-op if the destination already has it.
/// Throws NotFound at the source or Refused at the destination.
bool replicate(const Digest& hash, BlobStore& from, BlobStore& to);

/// Drops every blob not in `referenced`. Returns the number removed.
std::size_t collect_garbage(BlobStore& store, const std::set<Digest>& referenced);

} // namespace plurinet

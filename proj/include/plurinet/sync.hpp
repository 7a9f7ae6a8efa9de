#pragma once

// Pull-based anti-entropy over signed head exchange. A node asks a peer for
// its heads, requests the entries it lacks and accepts only what verifies
// against its own prefix. Conflicting valid entries become fork evidence,
// which then travels with every head response for that stream.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "plurinet/stream_store.hpp"

namespace plurinet {

inline constexpr std::uint64_t kMaxEntriesPerResponse = 1000;

struct PeerAddress {
    std::optional<Principal> node_id; // checked against response signatures when set
    std::string endpoint;             // http://host:port or sim:<index>

    Json to_json() const;
    static PeerAddress from_json(const Json& j);
};

struct HeadInfo {
    StreamId stream;
    std::uint64_t head_seq = 0;
    Digest head_hash;
    bool forked = false;
    std::optional<ForkEvidence> evidence;

    Json to_json() const;
    static HeadInfo from_json(const Json& j);
};

HeadInfo head_of(const StreamState& s);

struct SyncMessage {
    enum class Kind { HeadRequest, HeadResponse, EntriesRequest, EntriesResponse, Announce };

    Kind kind = Kind::HeadRequest;
    std::optional<StreamId> stream_id; // HEAD_REQUEST without one asks for every head
    std::uint64_t from_seq = 0;
    std::uint64_t to_seq = 0;
    std::vector<HeadInfo> heads;
    std::optional<GenesisRecord> genesis;
    std::vector<ContentEntry> entries;
    std::optional<Principal> sender;
    std::optional<Signature> signature;

    Json to_json(bool with_signature = true) const;
    static SyncMessage from_json(const Json& j);

    void sign(const Keypair& key);
    bool verify_signature() const;
};

std::string_view to_string(SyncMessage::Kind k);
std::optional<SyncMessage::Kind> parse_message_kind(std::string_view text);

/// Length-delimited framing: decimal byte count, newline, canonical JSON.
std::string encode_frame(const SyncMessage& m);
/// Decodes every complete frame; throws InvalidArgument on a malformed one.
std::vector<SyncMessage> decode_frames(std::string_view bytes);

/// Server side of the protocol: answers HEAD_REQUEST and ENTRIES_REQUEST
/// from a store snapshot, signed by the node key.
SyncMessage answer(const StreamStore& store, const Keypair& node_key, const SyncMessage& request);

class PeerClient {
public:
    virtual ~PeerClient() = default;
    virtual const PeerAddress& address() const = 0;
    /// HEAD_RESPONSE for one stream or, without an id, every stream.
    /// Throws PeerUnreachable.
    virtual SyncMessage heads(const std::optional<StreamId>& stream) = 0;
    /// ENTRIES_RESPONSE carrying the genesis and the inclusive seq range.
    virtual SyncMessage entries(const StreamId& stream, std::uint64_t from_seq, std::uint64_t to_seq) = 0;
};

/// An in-process peer backed by another store.
class LocalPeer : public PeerClient {
public:
    LocalPeer(const StreamStore& store, Keypair node_key, std::string endpoint = "local:");

    const PeerAddress& address() const override { return address_; }
    SyncMessage heads(const std::optional<StreamId>& stream) override;
    SyncMessage entries(const StreamId& stream, std::uint64_t from_seq, std::uint64_t to_seq) override;

    void set_online(bool online) { online_ = online; }

private:
    const StreamStore& store_;
    Keypair key_;
    PeerAddress address_;
    bool online_ = true;
};

/// A remote node's `/sync/` and `/streams/` endpoints.
class HttpPeer : public PeerClient {
public:
    explicit HttpPeer(PeerAddress address);

    const PeerAddress& address() const override { return address_; }
    SyncMessage heads(const std::optional<StreamId>& stream) override;
    SyncMessage entries(const StreamId& stream, std::uint64_t from_seq, std::uint64_t to_seq) override;

private:
    SyncMessage fetch(const std::string& path);

    PeerAddress address_;
};

std::unique_ptr<PeerClient> connect_peer(const PeerAddress& address);

struct SyncResult {
    std::size_t new_entries = 0;
    bool fork_detected = false;
    std::uint64_t head_seq = 0;
};

/// Pulls one stream from a peer. Throws PeerUnreachable, or ValidationRejected
/// with local state unchanged. A peer without the stream yields an empty result.
SyncResult sync_stream(StreamStore& store, PeerClient& peer, const StreamId& stream);

struct GossipReport {
    std::size_t peers_contacted = 0;
    std::vector<std::string> unreachable;
    std::size_t entries_transferred = 0;
    std::size_t streams_synced = 0;
    std::vector<StreamId> forks_detected;
    std::vector<std::string> rejected;

    Json to_json() const;
};

using StreamFilter = std::function<bool(const StreamId&)>;

/// One anti-entropy round: fetch every peer's heads and pull whatever
/// differs. Unreachable peers are skipped and reported.
GossipReport gossip_round(StreamStore& store, const std::vector<PeerClient*>& peers, const StreamFilter& wanted = {});

} // namespace plurinet

#pragma once

// Content streams: append-only, hash-chained, signed indexes of published
// content. Entries commit to SHA-256 of the payload only; the bytes live in
// blob stores (see storage.hpp). Structured payloads (moderation actions,
// writer updates, tombstones) travel inline in the entry's `body` field so a
// stream file is self-describing for those kinds.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "plurinet/canonical.hpp"
#include "plurinet/identity.hpp"

namespace plurinet {

inline constexpr std::size_t kMaxStreamNameBytes = 256;

enum class StreamKind { Content, Moderation };
enum class PayloadKind { Post, Reply, Edit, Tombstone, ModAction, WriterUpdate };

std::string_view to_string(StreamKind kind);
std::string_view to_string(PayloadKind kind);
std::optional<StreamKind> parse_stream_kind(std::string_view text);
std::optional<PayloadKind> parse_payload_kind(std::string_view text);

/// True for kinds whose payload is carried inline as canonical JSON.
bool is_inline_kind(PayloadKind kind);

struct StreamId {
    Digest value;

    /// SHA-256(owner public key || 0x1F || name)
    static StreamId derive(const Principal& owner, std::string_view name);
    static std::optional<StreamId> from_hex(std::string_view hex);
    std::string hex() const { return value.hex(); }

    auto operator<=>(const StreamId&) const = default;
};

struct EntryRef {
    StreamId stream;
    std::uint64_t seq = 0;

    /// `ref:<stream hex>:<seq>`
    std::string to_string() const;
    static std::optional<EntryRef> parse(std::string_view text);

    auto operator<=>(const EntryRef&) const = default;
};

struct GenesisRecord {
    StreamId stream_id;
    Principal owner;
    std::string name;
    StreamKind kind = StreamKind::Content;
    std::vector<Principal> writers;
    std::int64_t created_at = 0;
    std::optional<StreamId> scope; // moderation streams: the content stream annotated
    Signature signature;

    Json to_json(bool with_signature = true) const;
    static GenesisRecord from_json(const Json& j);
};

struct ContentEntry {
    StreamId stream_id;
    std::uint64_t seq = 0;
    Principal author;
    std::int64_t timestamp = 0;
    PayloadKind payload_kind = PayloadKind::Post;
    Digest content_hash;
    std::optional<EntryRef> reply_to; // unverified claim
    Digest prev_hash;
    std::optional<Json> body;
    Signature signature;

    EntryRef ref() const { return {stream_id, seq}; }

    Json to_json(bool with_signature = true) const;
    static ContentEntry from_json(const Json& j);

    bool operator==(const ContentEntry& o) const;
};

/// Canonical bytes of a record with the signature key absent.
std::string canonical_bytes(const GenesisRecord& g);
std::string canonical_bytes(const ContentEntry& e);

Digest record_hash(const GenesisRecord& g);
Digest record_hash(const ContentEntry& e);

struct ForkEvidence {
    ContentEntry first;
    ContentEntry second;
};

/// An immutable value; append() and extend() return a new state.
struct StreamState {
    GenesisRecord genesis;
    std::vector<ContentEntry> entries;
    std::vector<Principal> writers; // writer set in effect at head
    bool forked = false;
    std::optional<ForkEvidence> fork_evidence;

    const StreamId& id() const { return genesis.stream_id; }
    std::uint64_t head_seq() const { return entries.size(); }
    Digest head_hash() const;
    bool is_writer(const Principal& p) const;
};

enum class ValidationReason { BadSignature, BadChain, BadSeq, UnauthorizedWriter, Fork, BadPayload };
std::string_view to_string(ValidationReason reason);

struct ValidationReport {
    bool ok = true;
    std::optional<std::uint64_t> first_bad_seq;
    std::vector<ValidationReason> reasons;

    bool has(ValidationReason r) const;
};

struct AppendOptions {
    std::optional<EntryRef> reply_to;
    std::optional<std::int64_t> timestamp;
};

struct AppendResult {
    StreamState state;
    ContentEntry entry;
};

/// Throws InvalidArgument if the name exceeds 256 bytes. The owner is added
/// to writers if absent.
StreamState create_stream(const Keypair& owner, std::string_view name, StreamKind kind,
                          std::vector<Principal> writers, std::optional<std::int64_t> created_at = {},
                          std::optional<StreamId> scope = {});

/// Builds and signs the next entry without touching the state. For inline
/// kinds the payload must be a JSON object in text form.
ContentEntry make_entry(const StreamState& state, const Keypair& author, PayloadKind kind,
                        ByteView payload, const AppendOptions& opts = {});

/// Validates a signed entry against the head and returns the extended state.
/// Throws ForkedStream, UnauthorizedWriter or ValidationRejected.
StreamState extend(StreamState state, const ContentEntry& entry);

AppendResult append(StreamState state, const Keypair& author, PayloadKind kind, ByteView payload,
                    const AppendOptions& opts = {});

/// Checks genesis, then per entry: seq continuity, prev_hash linkage,
/// signature, writer authorization, inline payload consistency.
ValidationReport verify_stream(const GenesisRecord& genesis, const std::vector<ContentEntry>& entries);

bool verify_genesis(const GenesisRecord& g);

/// Evidence iff same (stream, seq), both signatures valid, different hashes.
std::optional<ForkEvidence> detect_fork(const ContentEntry& a, const ContentEntry& b);

/// Builds a state from already-parsed records after full verification.
/// Throws ValidationRejected with the report's first failure.
StreamState load_verified(const GenesisRecord& genesis, const std::vector<ContentEntry>& entries);

// .csl files: one canonical JSON record per line, genesis first.
std::string to_csl(const GenesisRecord& genesis, const std::vector<ContentEntry>& entries);
inline std::string to_csl(const StreamState& s) { return to_csl(s.genesis, s.entries); }

struct CslContents {
    GenesisRecord genesis;
    std::vector<ContentEntry> entries;
    bool truncated_tail = false; // final line was incomplete and dropped
};

/// Parses .csl text. An unterminated, unparsable final line is treated as a
/// torn write and dropped; any other malformed line throws InvalidArgument.
CslContents parse_csl(std::string_view text);
CslContents read_csl_file(const std::filesystem::path& path);
/// Writes atomically via a temporary file and rename.
void write_csl_file(const std::filesystem::path& path, const StreamState& state);

Json fork_evidence_to_json(const ForkEvidence& ev);
ForkEvidence fork_evidence_from_json(const Json& j);

} // namespace plurinet

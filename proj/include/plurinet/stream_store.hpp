#pragma once

// The node's stream store: the single writer for every stream it holds.
// Readers get immutable snapshots, so long syncs never block reads. With a
// directory, each stream lives in `<dir>/<id>.csl` (appended line by line)
// and fork evidence in `<dir>/<id>.fork.json`.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <vector>

#include "plurinet/moderation.hpp"

namespace plurinet {

struct RecoveryReport {
    std::vector<StreamId> loaded;
    std::vector<StreamId> truncated; // torn or unterminated final line repaired and file rewritten
};

/// Result of offering peer data for one stream.
struct AcceptOutcome {
    std::size_t new_entries = 0;
    bool fork_detected = false; // newly flagged by this call
    bool gap = false;           // entries start past local head + 1; nothing applied
    bool created = false;
};

class StreamStore {
public:
    StreamStore() = default;
    /// Loads every `.csl` file. A torn final line is truncated; any other
    /// corruption throws IntegrityFailure naming the file.
    explicit StreamStore(std::filesystem::path dir);

    StreamStore(const StreamStore&) = delete;
    StreamStore& operator=(const StreamStore&) = delete;

    const RecoveryReport& recovery() const { return recovery_; }
    const std::optional<std::filesystem::path>& dir() const { return dir_; }

    std::shared_ptr<const StreamState> get(const StreamId& id) const;
    bool contains(const StreamId& id) const { return get(id) != nullptr; }
    std::vector<StreamId> ids() const;
    std::vector<std::shared_ptr<const StreamState>> all() const;
    /// Bumped on every change.
    std::uint64_t version() const;

    /// Adds a verified stream. Returns false if already present (identical
    /// or not); never replaces existing data.
    bool insert(const StreamState& state);
    /// Extends a stream with already-signed entries, all or nothing.
    /// Throws NotFound, ForkedStream, UnauthorizedWriter or ValidationRejected.
    std::shared_ptr<const StreamState> append(const StreamId& id, const std::vector<ContentEntry>& entries);

    /// Verifies a genesis plus a contiguous run of entries from a peer.
    /// Overlapping entries that differ from local ones are fork evidence
    /// (flagged, nothing else applied); entries past the head extend it.
    /// Throws ValidationRejected with local state unchanged on invalid data.
    AcceptOutcome accept(const GenesisRecord& genesis, const std::vector<ContentEntry>& entries);

    /// Flags the stream if the evidence is valid for it. Returns true when
    /// newly flagged.
    bool mark_forked(const ForkEvidence& evidence);

    StreamFetcher fetcher() const;

private:
    struct Slot {
        std::mutex write;
        std::shared_ptr<const StreamState> state;
    };

    Slot* slot(const StreamId& id) const;
    Slot& slot_or_create(const StreamId& id);
    void persist_full(const StreamState& s);
    void persist_tail(const StreamState& s, std::size_t from_index);
    void persist_fork(const StreamState& s);
    void publish(Slot& slot, std::shared_ptr<const StreamState> next);

    std::optional<std::filesystem::path> dir_;
    RecoveryReport recovery_;
    mutable std::shared_mutex map_mutex_;
    std::map<StreamId, std::unique_ptr<Slot>> slots_;
    std::uint64_t version_ = 0;
};

/// True if the evidence is a valid fork of `state`: both entries signed by
/// writers of the stream, same seq, different records.
bool valid_fork_evidence(const StreamState& state, const ForkEvidence& ev);

} // namespace plurinet

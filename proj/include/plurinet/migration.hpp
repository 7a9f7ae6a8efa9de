#pragma once

// Export, import and provider switching. A bundle is a directory:
//
//   manifest.json            canonical JSON, carries bundle_digest
//   streams/<stream_id>.csl  stream files, byte-identical to the source node
//   blobs/<hh>/<hash>        content-addressed payloads
//   hints.jsonl              storage hints for the exported blobs
//   subscriptions.json       reader subscription sets
//   keys.json                only with include_keys
//
// The same content also travels as a single JSON document (bundle_to_json)
// for the HTTP API.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "plurinet/node.hpp"

namespace plurinet {

struct ManifestStream {
    StreamId stream;
    std::uint64_t head_seq = 0;
    Digest head_hash;
};

struct ExportManifest {
    std::int64_t created_at = 0; // newest timestamp in the exported data
    std::vector<ManifestStream> streams;
    std::vector<Digest> blobs;
    std::vector<Digest> missing_blobs; // referenced but unresolvable at export time
    Digest hints_digest;
    Digest subscriptions_digest;
    std::optional<Digest> keys_digest;
    Digest bundle_digest;

    /// Everything except bundle_digest.
    Json body_json() const;
    Json to_json() const;
    static ExportManifest from_json(const Json& j);
};

/// SHA-256 over the canonical manifest without its bundle_digest field.
Digest bundle_digest(const ExportManifest& m);

struct ExportBundle {
    ExportManifest manifest;
    std::map<StreamId, std::string> streams; // .csl text
    std::map<Digest, Bytes> blobs;
    std::vector<StorageHint> hints;
    std::vector<SubscriptionSet> subscriptions;
    std::optional<Json> keys;
    std::vector<std::string> warnings;
};

struct ExportOptions {
    std::vector<StreamId> streams; // empty: all
    bool include_keys = false;
};

/// Reads a snapshot of the selected streams. Unresolvable blobs are listed
/// in warnings and missing_blobs; their entries are still exported.
ExportBundle export_bundle(Node& node, const ExportOptions& opts = {});

/// Throws BadDigest if any part disagrees with the manifest.
void verify_bundle(const ExportBundle& bundle);

void write_bundle(const ExportBundle& bundle, const std::filesystem::path& dir);
/// Reads and verifies; throws BadDigest on mismatch.
ExportBundle read_bundle(const std::filesystem::path& dir);

Json bundle_to_json(const ExportBundle& bundle);
ExportBundle bundle_from_json(const Json& j);

struct MigrationConflict {
    StreamId stream;
    std::string reason;
    std::optional<ForkEvidence> evidence;

    Json to_json() const;
};

struct MigrationReport {
    std::size_t streams_imported = 0;
    std::size_t streams_skipped = 0;
    std::size_t entries_imported = 0;
    std::size_t blobs_imported = 0;
    std::size_t blobs_skipped = 0;
    std::size_t blobs_replicated = 0;
    std::size_t hints_issued = 0;
    std::size_t hints_imported = 0;
    std::size_t subscriptions_imported = 0;
    std::vector<MigrationConflict> conflicts;
    std::vector<Digest> unresolved;
    std::vector<std::string> warnings;

    Json to_json() const;
};

/// Verifies the bundle, then adds what is missing. Identical data is
/// skipped; divergent histories are reported as conflicts and left alone.
MigrationReport import_bundle(Node& node, const ExportBundle& bundle);

/// Replicates every blob the stream references to `new_store` and issues
/// fresh hints signed by `issuer` for each verified copy. Entries and their
/// signatures are never touched.
MigrationReport switch_provider(Node& node, const StreamId& stream, const std::string& old_store,
                                const std::string& new_store, const Keypair& issuer, std::int64_t now);

} // namespace plurinet

#pragma once

// Node operations shared by the HTTP daemon and the CLI. Each returns the
// JSON document both surfaces print, so the two stay in step.

#include <optional>
#include <string>
#include <vector>

#include "plurinet/migration.hpp"

namespace plurinet {

/// `{"code","http_status","message"}`
Json error_body(const Error& e);

/// Key files hold `{"public_key","seed"}` in hex.
Json keyfile_json(const Keypair& kp);
Keypair load_keyfile(const std::filesystem::path& path);
void write_keyfile(const std::filesystem::path& path, const Keypair& kp);

Json stream_summary(const StreamState& s);
Json health(Node& node);
Json list_streams(Node& node);
/// Verifies and stores a signed genesis. `created` is false if already held.
Json publish_genesis(Node& node, const GenesisRecord& genesis);
/// Appends already-signed entries; the signatures are checked, never made here.
Json publish_entries(Node& node, const StreamId& stream, const std::vector<ContentEntry>& entries);
/// Stores a blob in the primary store and answers with a node-signed hint.
Json upload_blob(Node& node, ByteView bytes, const Attribution& attr, std::int64_t now);
/// Offers a peer's ENTRIES_RESPONSE or ANNOUNCE to the stream store.
Json accept_sync(Node& node, const SyncMessage& message);

struct ForumQuery {
    std::string forum_id;
    std::optional<Digest> as;           // reader principal id: picks a stored subscription set
    std::vector<StreamId> disable;      // extra unlocked defaults to skip
    FeedOptions options;
};

SubscriptionSet subscriptions_for(Node& node, const std::optional<Digest>& reader);
/// Throws NotFound for an unknown forum.
ForumConfig forum_config(Node& node, const std::string& forum_id);

Feed forum_feed(Node& node, const ForumConfig& forum, const SubscriptionSet& subs, const FeedOptions& opts);
Feed forum_feed(Node& node, const ForumQuery& query);
Feed follow_feed(Node& node, const SubscriptionSet& subs, const FeedOptions& opts);
/// Forum feed against the raw view of the same index snapshot.
Json forum_diff(Node& node, const ForumConfig& forum, const SubscriptionSet& subs, const FeedOptions& opts);

/// MOD_ACTION payloads of a stream, oldest first.
std::vector<ModAction> actions_of(const StreamState& s);
ModeratorRanking rank(Node& node, const std::vector<StreamId>& candidates, const std::optional<StreamId>& history,
                      std::int64_t now);
/// Compares two moderation streams over the given content streams (all when empty).
ContentionReport compare(Node& node, const StreamId& a, const StreamId& b, const std::vector<StreamId>& content);

Json refuse(Node& node, const std::string& store_id, const RefusalTarget& target);
Json gc(Node& node);
Json add_store(Node& node, const BlobStoreConfig& cfg);
/// Hints for the new copies are signed by the node key.
MigrationReport switch_provider_op(Node& node, const StreamId& stream, const std::string& from, const std::string& to,
                                   std::int64_t now);

std::vector<StreamId> parse_stream_list(const std::string& csv);

} // namespace plurinet

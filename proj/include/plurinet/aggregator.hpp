#pragma once

// Aggregation: an index over verified streams plus resolved moderation,
// assembled into forum (deny-list) and follow (allow-list) feeds. Feeds are
// pure functions of an index snapshot and the caller's subscriptions.

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "plurinet/moderation.hpp"

namespace plurinet {

using BlobResolver = std::function<std::optional<Bytes>(const Digest&)>;

/// A moderation stream the aggregator applies by default. Locked streams
/// cannot be disabled by readers.
struct AuthorityStream {
    StreamId stream;
    bool locked = false;
};

struct ForumConfig {
    std::string forum_id;
    std::vector<StreamId> content_streams;
    std::vector<StreamId> moderator_streams;
    std::vector<AuthorityStream> authority_streams;

    /// Throws ConfigError on unknown keys or an empty content stream list.
    static ForumConfig from_json(const Json& j);
    Json to_json() const;
};

struct SubscriptionSet {
    std::optional<Principal> user;
    std::set<StreamId> follows;
    std::set<StreamId> muted;
    std::set<StreamId> disabled_defaults;

    /// Throws InvalidArgument if follows and muted overlap.
    void validate() const;
    static SubscriptionSet from_json(const Json& j);
    Json to_json() const;
};

struct IndexedItem {
    ContentEntry entry;
    std::optional<Bytes> payload; // nullopt: UNRESOLVED
};

class ContentIndex {
public:
    /// Verifies and indexes a stream. Re-ingesting a stream adds only entries
    /// past the indexed head; a history that does not extend the indexed one
    /// is skipped with a warning. Invalid streams are skipped likewise.
    void ingest(const StreamState& stream, const BlobResolver& blobs);

    const StreamState* stream(const StreamId& id) const;
    std::vector<StreamId> stream_ids() const;
    const IndexedItem* item(const EntryRef& ref) const;

    std::vector<EntryRef> by_author(const Digest& principal_id) const;
    std::vector<EntryRef> by_hash(const Digest& content_hash) const;
    std::optional<std::pair<std::uint64_t, std::uint64_t>> seq_range(const StreamId& id) const;
    /// Refs with timestamp >= since, newest first.
    std::vector<EntryRef> recent(std::int64_t since, std::size_t limit) const;

    /// Presentable entries (posts, replies, edits not tombstoned) of the given
    /// content streams, or of every content stream when `streams` is empty.
    std::vector<ContentEntry> raw_entries(const std::vector<StreamId>& streams = {}) const;

    StreamFetcher fetcher() const;
    /// Digest over every indexed (stream, head hash) pair.
    Digest snapshot() const;
    const std::vector<std::string>& warnings() const { return warnings_; }
    std::size_t size() const { return items_.size(); }

    bool operator==(const ContentIndex& o) const;

private:
    void index_entry(const ContentEntry& e, const BlobResolver& blobs);

    std::map<StreamId, StreamState> streams_;
    std::map<EntryRef, IndexedItem> items_;
    std::map<Digest, std::set<EntryRef>> by_author_;
    std::map<Digest, std::set<EntryRef>> by_hash_;
    std::map<std::int64_t, std::set<EntryRef>> by_hour_;
    std::map<StreamId, std::set<std::uint64_t>> tombstoned_;
    std::vector<std::string> warnings_;
};

ContentIndex ingest(ContentIndex index, const std::vector<StreamState>& streams, const BlobResolver& blobs);

struct Provenance {
    SourceSet allowed_by;
    SourceSet denied_by;
    SourceSet labeled_by;
};

struct FeedItem {
    ContentEntry entry;
    std::optional<Bytes> payload;
    std::vector<std::string> labels;
    Provenance provenance;
    std::optional<int> score; // sum of SCORE marks, when any

    Json to_json() const;
};

enum class FeedSort { Chronological, Score };

struct Feed {
    std::string kind; // forum, follow or raw
    std::string feed_id;
    std::vector<FeedItem> items;
    ModerationDiff diff;
    std::int64_t generated_at = 0;
    Digest policy_digest;
    Digest snapshot;
    SourceSet sources;
    std::vector<std::string> warnings;

    Json to_json() const;
};

struct FeedOptions {
    FeedSort sort = FeedSort::Chronological;
    std::optional<std::int64_t> now;
};

/// Orders by timestamp descending, then StreamId, then seq.
bool feed_order(const ContentEntry& a, const ContentEntry& b);

/// Moderators and authority streams are unioned, then deny overrides allow.
/// Unlocked authority streams listed in subs.disabled_defaults are skipped.
Feed assemble_forum_feed(const ForumConfig& config, const ContentIndex& index, const SubscriptionSet& subs,
                         const FeedOptions& opts = {});

/// Union of the followed streams' policies, minus muted streams'
/// contributions, applied as an allow list over all indexed content.
Feed assemble_follow_feed(const SubscriptionSet& subs, const ContentIndex& index, const FeedOptions& opts = {});

/// The unmoderated view of a forum's content streams.
Feed assemble_raw_feed(const std::string& feed_id, const std::vector<StreamId>& streams, const ContentIndex& index,
                       const FeedOptions& opts = {});

/// Items of `raw_feed` missing from `feed_with`, with responsible sources.
/// Throws SnapshotMismatch when the feeds come from different snapshots.
ModerationDiff feed_diff(const Feed& feed_with, const Feed& raw_feed);

struct RankingWeights {
    double agreement = 0.5;
    double coverage = 0.3;
    double recency = 0.2;
    double recency_days = 30.0;
};

struct ModeratorScore {
    StreamId stream;
    double coverage = 0;
    double agreement = 0;
    std::optional<std::int64_t> recency_seconds; // nullopt: no actions
    double recency_score = 0;
    double composite = 0;
};

struct ModeratorRanking {
    std::vector<ModeratorScore> ranked; // best first
    std::vector<std::string> warnings;

    Json to_json() const;
};

/// Coverage: fraction of the index's presentable items acted on by the
/// candidate's resolved policy. Agreement: fraction of the user's ALLOW,
/// DENY, LABEL and SCORE actions the policy matches (0.5 when there are none).
ModeratorRanking rank_moderators(const std::vector<StreamId>& candidates, const ContentIndex& index,
                                 const std::vector<ModAction>& user_history, std::int64_t now,
                                 const RankingWeights& weights = {});

} // namespace plurinet

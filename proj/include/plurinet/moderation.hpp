#pragma once

// Moderation streams are ordinary signed streams of kind MODERATION whose
// MOD_ACTION entries carry a ModAction inline. Anyone can publish one; a
// stream may include or exclude other moderation streams, so curation
// composes recursively. Nothing here mutates content: filtering only decides
// what a view shows and records who decided it.

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "plurinet/content_stream.hpp"

namespace plurinet {

inline constexpr int kDefaultDepthLimit = 16;
inline constexpr std::size_t kMaxLabelBytes = 64;
inline constexpr std::size_t kMaxReasonBytes = 1024;

/// What a moderation action points at. Encoded as `ref:<stream>:<seq>`,
/// `sha256:<hex>`, `ed25519:<principal id>` or `stream:<stream>`.
struct Target {
    enum class Kind { Ref, ContentHash, Principal, Stream };
    Kind kind = Kind::Ref;
    Digest value;
    std::uint64_t seq = 0; // Ref only

    static Target of(const EntryRef& ref) { return {Kind::Ref, ref.stream.value, ref.seq}; }
    static Target of_hash(const Digest& h) { return {Kind::ContentHash, h, 0}; }
    static Target of(const Principal& p) { return {Kind::Principal, p.id(), 0}; }
    static Target of_principal_id(const Digest& id) { return {Kind::Principal, id, 0}; }
    static Target of(const StreamId& s) { return {Kind::Stream, s.value, 0}; }

    std::string encode() const;
    static std::optional<Target> parse(std::string_view text);

    auto operator<=>(const Target&) const = default;
};

enum class Verb { Allow, Deny, Label, Score, IncludeStream, ExcludeStream };
std::string_view to_string(Verb v);
std::optional<Verb> parse_verb(std::string_view text);

struct ModAction {
    Verb verb = Verb::Deny;
    Target target;
    std::optional<std::string> label;
    std::optional<int> score;
    std::optional<std::string> reason;

    /// Throws InvalidArgument unless exactly the fields the verb needs are set.
    void validate() const;
    Json to_json() const;
    static ModAction from_json(const Json& j);
};

/// Appends a MOD_ACTION entry carrying `action` to a moderation stream.
AppendResult append_action(StreamState stream, const Keypair& author, const ModAction& action,
                           const AppendOptions& opts = {});

using SourceSet = std::set<StreamId>;

struct LabelMark {
    std::string label;
    Digest principal; // who labeled
    StreamId source;
    auto operator<=>(const LabelMark&) const = default;
};

struct ScoreMark {
    int score = 0;
    Digest principal;
    StreamId source;
    auto operator<=>(const ScoreMark&) const = default;
};

/// Flattened result of resolving a moderation graph. allow and deny may
/// overlap here; conflicts are settled by the combinator or the filter mode.
struct EffectivePolicy {
    std::map<Target, SourceSet> allow;
    std::map<Target, SourceSet> deny;
    std::map<Target, std::set<LabelMark>> labels;
    std::map<Target, std::set<ScoreMark>> scores;
    SourceSet sources;
    std::set<std::string> warnings;

    Json to_json() const;
    Digest digest() const;
    bool operator==(const EffectivePolicy&) const = default;
};

/// Removes every contribution made by the given source streams.
EffectivePolicy without_sources(const EffectivePolicy& policy, const SourceSet& drop);

using StreamFetcher = std::function<std::optional<StreamState>(const StreamId&)>;

/// Policy contributed by a single stream's own actions. Within a stream the
/// last entry wins per (verb class, target): ALLOW/DENY share a class, as do
/// INCLUDE/EXCLUDE; SCORE is per target; LABEL per (target, label).
struct LocalPolicy {
    StreamId stream;
    std::map<Target, std::pair<bool, Digest>> visibility; // true = allow; author id
    std::map<std::pair<Target, std::string>, Digest> labels;
    std::map<Target, std::pair<int, Digest>> scores;
    std::set<StreamId> includes;
    std::set<StreamId> excludes;
    std::int64_t latest_action = 0; // 0 when the stream holds no actions
    std::size_t action_count = 0;
    std::vector<std::string> warnings;
};

LocalPolicy local_policy(const StreamState& stream);

/// Expands INCLUDE_STREAM edges breadth first from `root` up to depth_limit
/// (root is depth 0). Streams excluded by any stream in the include closure
/// are pruned, then the closure is recomputed without them. Each stream is
/// fetched and expanded at most once. Cycles, truncation, fetch failures and
/// non-moderation includes become warnings, never errors.
EffectivePolicy resolve_policy(const StreamState& root, const StreamFetcher& fetch,
                               int depth_limit = kDefaultDepthLimit);

enum class Combinator { Union, Intersection, DenyOverrides };

EffectivePolicy combine_policies(const std::vector<EffectivePolicy>& policies, Combinator combinator);

enum class FilterMode { DenyList, AllowList };
std::string_view to_string(FilterMode m);

struct HiddenItem {
    enum class Reason { Denied, NotAllowed };
    EntryRef ref;
    SourceSet sources;
    Reason reason = Reason::Denied;
};

struct ModerationDiff {
    std::vector<HiddenItem> hidden;
    std::map<EntryRef, SourceSet> revealed_only_by;
    std::map<std::string, std::size_t> label_summary;

    Json to_json() const;
};

struct FilterResult {
    std::vector<ContentEntry> visible;
    ModerationDiff diff;
};

/// The targets an entry can be matched by: its ref, its content hash, its author.
std::vector<Target> targets_of(const ContentEntry& e);

/// DENY_LIST: visible unless denied and not explicitly allowed.
/// ALLOW_LIST: visible only if allowed and not denied. Raw order is preserved.
FilterResult apply_filter(const EffectivePolicy& policy, const std::vector<ContentEntry>& raw, FilterMode mode);

struct ContentionReport {
    std::vector<Target> contested_targets; // one side denies what the other does not
    std::vector<Target> agreed_targets;
    std::vector<Target> a_only;
    std::vector<Target> b_only;
    std::vector<EntryRef> contested_items; // hidden by exactly one side
    std::vector<EntryRef> agreed_hidden;

    Json to_json() const;
};

ContentionReport compare_policies(const EffectivePolicy& a, const EffectivePolicy& b,
                                  const std::vector<ContentEntry>& raw);
ContentionReport compare_streams(const StreamState& a, const StreamState& b, const std::vector<ContentEntry>& raw,
                                 const StreamFetcher& fetch, int depth_limit = kDefaultDepthLimit);

} // namespace plurinet

#include "plurinet/aggregator.hpp"

#include <algorithm>
#include <cmath>

#include "plurinet/error.hpp"

namespace plurinet {

namespace {

constexpr std::int64_t kBucketSeconds = 3600;

std::int64_t bucket_of(std::int64_t ts) {
    return ts >= 0 ? ts / kBucketSeconds : -((-ts + kBucketSeconds - 1) / kBucketSeconds);
}

bool presentable(PayloadKind k) {
    return k == PayloadKind::Post || k == PayloadKind::Reply || k == PayloadKind::Edit;
}

Json ids_json(const SourceSet& s) {
    Json out = Json::array();
    for (const auto& id : s) out.push_back(id.hex());
    return out;
}

StreamId parse_stream(const Json& v, std::string_view what) {
    if (!v.is_string()) throw Error(ErrorCode::ConfigError, std::string(what) + " must be a stream id string");
    auto id = StreamId::from_hex(v.get<std::string>());
    if (!id) throw Error(ErrorCode::ConfigError, std::string(what) + ": bad stream id '" + v.get<std::string>() + "'");
    return *id;
}

void only_keys(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view what,
               ErrorCode code) {
    if (!j.is_object()) throw Error(code, std::string(what) + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
            throw Error(code, std::string(what) + ": unknown key '" + it.key() + "'");
        }
    }
}

std::set<StreamId> stream_set(const Json& j, std::string_view key, ErrorCode code) {
    std::set<StreamId> out;
    auto it = j.find(std::string(key));
    if (it == j.end()) return out;
    if (!it->is_array()) throw Error(code, std::string(key) + " must be an array");
    for (const auto& v : *it) {
        try {
            out.insert(parse_stream(v, key));
        } catch (const Error& e) {
            throw Error(code, e.what());
        }
    }
    return out;
}

bool valid_utf8(const Bytes& b) {
    try {
        Json(std::string(b.begin(), b.end())).dump(-1, ' ', false, Json::error_handler_t::strict);
        return true;
    } catch (const Json::exception&) {
        return false;
    }
}

FeedItem decorate(const ContentEntry& e, const EffectivePolicy& policy, const ContentIndex& index) {
    FeedItem item;
    item.entry = e;
    if (const auto* indexed = index.item(e.ref())) item.payload = indexed->payload;
    std::set<std::string> labels;
    int score = 0;
    bool scored = false;
    for (const auto& t : targets_of(e)) {
        if (auto it = policy.allow.find(t); it != policy.allow.end()) {
            item.provenance.allowed_by.insert(it->second.begin(), it->second.end());
        }
        if (auto it = policy.deny.find(t); it != policy.deny.end()) {
            item.provenance.denied_by.insert(it->second.begin(), it->second.end());
        }
        if (auto it = policy.labels.find(t); it != policy.labels.end()) {
            for (const auto& m : it->second) {
                labels.insert(m.label);
                item.provenance.labeled_by.insert(m.source);
            }
        }
        if (auto it = policy.scores.find(t); it != policy.scores.end()) {
            for (const auto& m : it->second) {
                score += m.score;
                scored = true;
            }
        }
    }
    item.labels.assign(labels.begin(), labels.end());
    if (scored) item.score = score;
    return item;
}

Feed build_feed(std::string kind, std::string id, const EffectivePolicy& policy, FilterResult filtered,
                const ContentIndex& index, const FeedOptions& opts) {
    Feed feed;
    feed.kind = std::move(kind);
    feed.feed_id = std::move(id);
    feed.policy_digest = policy.digest();
    feed.snapshot = index.snapshot();
    feed.sources = policy.sources;
    feed.warnings.assign(policy.warnings.begin(), policy.warnings.end());
    feed.generated_at = opts.now.value_or(unix_now());
    feed.diff = std::move(filtered.diff);
    for (const auto& e : filtered.visible) feed.items.push_back(decorate(e, policy, index));
    std::stable_sort(feed.items.begin(), feed.items.end(),
                     [](const FeedItem& a, const FeedItem& b) { return feed_order(a.entry, b.entry); });
    if (opts.sort == FeedSort::Score) {
        std::stable_sort(feed.items.begin(), feed.items.end(), [](const FeedItem& a, const FeedItem& b) {
            return a.score.value_or(0) > b.score.value_or(0);
        });
    }
    return feed;
}

EffectivePolicy resolve_ids(const std::vector<StreamId>& ids, const ContentIndex& index,
                            std::vector<std::string>& warnings) {
    std::vector<EffectivePolicy> parts;
    auto fetch = index.fetcher();
    for (const auto& id : ids) {
        const auto* s = index.stream(id);
        if (!s) {
            warnings.push_back("missing: moderation stream " + id.hex() + " not indexed");
            continue;
        }
        if (s->genesis.kind != StreamKind::Moderation) {
            warnings.push_back("ignored: stream " + id.hex() + " is not a moderation stream");
            continue;
        }
        parts.push_back(resolve_policy(*s, fetch));
    }
    return combine_policies(parts, Combinator::Union);
}

bool acted_on(const EffectivePolicy& p, const ContentEntry& e) {
    for (const auto& t : targets_of(e)) {
        if (p.allow.contains(t) || p.deny.contains(t) || p.labels.contains(t) || p.scores.contains(t)) return true;
    }
    return false;
}

bool matches_action(const EffectivePolicy& p, const ModAction& a) {
    switch (a.verb) {
    case Verb::Allow: return p.allow.contains(a.target);
    case Verb::Deny: return p.deny.contains(a.target);
    case Verb::Label: {
        auto it = p.labels.find(a.target);
        if (it == p.labels.end()) return false;
        return std::any_of(it->second.begin(), it->second.end(), [&](const LabelMark& m) { return m.label == *a.label; });
    }
    case Verb::Score: {
        auto it = p.scores.find(a.target);
        if (it == p.scores.end()) return false;
        auto sign = [](int v) { return (v > 0) - (v < 0); };
        return std::any_of(it->second.begin(), it->second.end(),
                           [&](const ScoreMark& m) { return sign(m.score) == sign(*a.score); });
    }
    default: return false;
    }
}

} // namespace

ForumConfig ForumConfig::from_json(const Json& j) {
    only_keys(j, {"forum_id", "content_streams", "moderator_streams", "authority_streams"}, "forum config",
              ErrorCode::ConfigError);
    ForumConfig c;
    auto id = j.find("forum_id");
    if (id == j.end() || !id->is_string() || id->get<std::string>().empty()) {
        throw Error(ErrorCode::ConfigError, "forum config: forum_id must be a non-empty string");
    }
    c.forum_id = id->get<std::string>();
    for (auto [key, dst] : {std::pair{"content_streams", &c.content_streams},
                            std::pair{"moderator_streams", &c.moderator_streams}}) {
        auto it = j.find(key);
        if (it == j.end()) continue;
        if (!it->is_array()) throw Error(ErrorCode::ConfigError, std::string(key) + " must be an array");
        for (const auto& v : *it) dst->push_back(parse_stream(v, key));
    }
    if (auto it = j.find("authority_streams"); it != j.end()) {
        if (!it->is_array()) throw Error(ErrorCode::ConfigError, "authority_streams must be an array");
        for (const auto& v : *it) {
            only_keys(v, {"stream", "locked"}, "authority stream", ErrorCode::ConfigError);
            AuthorityStream a;
            a.stream = parse_stream(v.contains("stream") ? v["stream"] : Json(), "authority stream");
            if (v.contains("locked")) {
                if (!v["locked"].is_boolean()) throw Error(ErrorCode::ConfigError, "locked must be a boolean");
                a.locked = v["locked"].get<bool>();
            }
            c.authority_streams.push_back(a);
        }
    }
    if (c.content_streams.empty()) {
        throw Error(ErrorCode::ConfigError, "forum " + c.forum_id + ": at least one content stream required");
    }
    return c;
}

Json ForumConfig::to_json() const {
    Json cs = Json::array(), ms = Json::array(), as = Json::array();
    for (const auto& s : content_streams) cs.push_back(s.hex());
    for (const auto& s : moderator_streams) ms.push_back(s.hex());
    for (const auto& a : authority_streams) as.push_back({{"locked", a.locked}, {"stream", a.stream.hex()}});
    return {{"authority_streams", as}, {"content_streams", cs}, {"forum_id", forum_id}, {"moderator_streams", ms}};
}

void SubscriptionSet::validate() const {
    for (const auto& f : follows) {
        if (muted.contains(f)) {
            throw Error(ErrorCode::InvalidArgument, "stream " + f.hex() + " is both followed and muted");
        }
    }
}

SubscriptionSet SubscriptionSet::from_json(const Json& j) {
    only_keys(j, {"user", "follows", "muted", "disabled_defaults"}, "subscriptions", ErrorCode::InvalidArgument);
    SubscriptionSet s;
    if (auto it = j.find("user"); it != j.end()) {
        auto p = it->is_string() ? Principal::from_public_key_hex(it->get<std::string>()) : std::nullopt;
        if (!p) throw Error(ErrorCode::InvalidArgument, "subscriptions: user must be a public key hex");
        s.user = *p;
    }
    s.follows = stream_set(j, "follows", ErrorCode::InvalidArgument);
    s.muted = stream_set(j, "muted", ErrorCode::InvalidArgument);
    s.disabled_defaults = stream_set(j, "disabled_defaults", ErrorCode::InvalidArgument);
    s.validate();
    return s;
}

Json SubscriptionSet::to_json() const {
    Json j{{"disabled_defaults", ids_json(disabled_defaults)}, {"follows", ids_json(follows)},
           {"muted", ids_json(muted)}};
    if (user) j["user"] = user->public_key_hex();
    return j;
}

void ContentIndex::ingest(const StreamState& stream, const BlobResolver& blobs) {
    const auto id = stream.id();
    auto existing = streams_.find(id);
    if (existing != streams_.end()) {
        const auto& old = existing->second;
        const auto n = old.entries.size();
        const auto m = stream.entries.size();
        auto skip = [&] { warnings_.push_back("skipped: stream " + id.hex() + " does not extend the indexed history"); };
        if (record_hash(stream.genesis) != record_hash(old.genesis)) return skip();
        if (m < n) {
            if (m > 0 && record_hash(old.entries[m - 1]) != stream.head_hash()) skip();
            return;
        }
        if (n > 0 && record_hash(stream.entries[n - 1]) != old.head_hash()) return skip();
        if (m == n) {
            // Same history; retry unresolved payloads only.
            for (auto& [ref, item] : items_) {
                if (ref.stream == id && !item.payload && blobs) {
                    try {
                        auto bytes = blobs(item.entry.content_hash);
                        if (bytes && sha256(*bytes) == item.entry.content_hash) item.payload = std::move(bytes);
                    } catch (const std::exception&) {
                    }
                }
            }
            return;
        }
        StreamState checked = old;
        checked.forked = false;
        try {
            for (std::size_t i = n; i < m; ++i) checked = extend(std::move(checked), stream.entries[i]);
        } catch (const Error&) {
            warnings_.push_back("rejected: stream " + id.hex() + " extension fails verification");
            return;
        }
        for (std::size_t i = n; i < m; ++i) index_entry(stream.entries[i], blobs);
        existing->second = stream;
        return;
    }

    auto report = verify_stream(stream.genesis, stream.entries);
    if (!report.ok) {
        warnings_.push_back("rejected: stream " + id.hex() + " fails verification at seq " +
                            std::to_string(*report.first_bad_seq));
        return;
    }
    for (const auto& e : stream.entries) index_entry(e, blobs);
    auto& kept = streams_[id];
    kept = stream;
}

void ContentIndex::index_entry(const ContentEntry& e, const BlobResolver& blobs) {
    IndexedItem item{e, std::nullopt};
    if (e.body) {
        auto text = canonical_dump(*e.body);
        item.payload = Bytes(text.begin(), text.end());
    } else if (blobs) {
        try {
            auto bytes = blobs(e.content_hash);
            if (bytes && sha256(*bytes) == e.content_hash) item.payload = std::move(bytes);
        } catch (const std::exception&) {
            item.payload.reset();
        }
    }
    const auto ref = e.ref();
    items_[ref] = std::move(item);
    by_author_[e.author.id()].insert(ref);
    by_hash_[e.content_hash].insert(ref);
    by_hour_[bucket_of(e.timestamp)].insert(ref);
    if (e.payload_kind == PayloadKind::Tombstone) {
        tombstoned_[e.stream_id].insert(e.body->at("target_seq").get<std::uint64_t>());
    }
}

const StreamState* ContentIndex::stream(const StreamId& id) const {
    auto it = streams_.find(id);
    return it == streams_.end() ? nullptr : &it->second;
}

std::vector<StreamId> ContentIndex::stream_ids() const {
    std::vector<StreamId> out;
    for (const auto& [id, _] : streams_) out.push_back(id);
    return out;
}

const IndexedItem* ContentIndex::item(const EntryRef& ref) const {
    auto it = items_.find(ref);
    return it == items_.end() ? nullptr : &it->second;
}

std::vector<EntryRef> ContentIndex::by_author(const Digest& principal_id) const {
    auto it = by_author_.find(principal_id);
    if (it == by_author_.end()) return {};
    return {it->second.begin(), it->second.end()};
}

std::vector<EntryRef> ContentIndex::by_hash(const Digest& content_hash) const {
    auto it = by_hash_.find(content_hash);
    if (it == by_hash_.end()) return {};
    return {it->second.begin(), it->second.end()};
}

std::optional<std::pair<std::uint64_t, std::uint64_t>> ContentIndex::seq_range(const StreamId& id) const {
    const auto* s = stream(id);
    if (!s || s->entries.empty()) return std::nullopt;
    return std::pair{s->entries.front().seq, s->entries.back().seq};
}

std::vector<EntryRef> ContentIndex::recent(std::int64_t since, std::size_t limit) const {
    std::vector<ContentEntry> found;
    for (auto it = by_hour_.rbegin(); it != by_hour_.rend() && it->first >= bucket_of(since); ++it) {
        if (found.size() >= limit) break; // every remaining bucket is older
        for (const auto& ref : it->second) {
            const auto& e = items_.at(ref).entry;
            if (e.timestamp >= since) found.push_back(e);
        }
    }
    std::sort(found.begin(), found.end(), feed_order);
    if (found.size() > limit) found.resize(limit);
    std::vector<EntryRef> out;
    for (const auto& e : found) out.push_back(e.ref());
    return out;
}

std::vector<ContentEntry> ContentIndex::raw_entries(const std::vector<StreamId>& streams) const {
    std::vector<ContentEntry> out;
    auto take = [&](const StreamState& s) {
        if (s.genesis.kind != StreamKind::Content) return;
        auto tomb = tombstoned_.find(s.id());
        for (const auto& e : s.entries) {
            if (!presentable(e.payload_kind)) continue;
            if (tomb != tombstoned_.end() && tomb->second.contains(e.seq)) continue;
            out.push_back(e);
        }
    };
    if (streams.empty()) {
        for (const auto& [_, s] : streams_) take(s);
    } else {
        std::set<StreamId> seen;
        for (const auto& id : streams) {
            if (!seen.insert(id).second) continue;
            if (const auto* s = stream(id)) take(*s);
        }
    }
    std::sort(out.begin(), out.end(), feed_order);
    return out;
}

StreamFetcher ContentIndex::fetcher() const {
    return [this](const StreamId& id) -> std::optional<StreamState> {
        const auto* s = stream(id);
        if (!s) return std::nullopt;
        return *s;
    };
}

Digest ContentIndex::snapshot() const {
    Json heads = Json::array();
    for (const auto& [id, s] : streams_) heads.push_back({id.hex(), s.head_seq(), s.head_hash().hex()});
    return sha256(canonical_dump(heads));
}

bool ContentIndex::operator==(const ContentIndex& o) const {
    if (snapshot() != o.snapshot() || items_.size() != o.items_.size()) return false;
    for (const auto& [ref, item] : items_) {
        auto it = o.items_.find(ref);
        if (it == o.items_.end() || !(it->second.entry == item.entry) || it->second.payload != item.payload) {
            return false;
        }
    }
    return by_author_ == o.by_author_ && by_hash_ == o.by_hash_ && by_hour_ == o.by_hour_ &&
           tombstoned_ == o.tombstoned_;
}

ContentIndex ingest(ContentIndex index, const std::vector<StreamState>& streams, const BlobResolver& blobs) {
    for (const auto& s : streams) index.ingest(s, blobs);
    return index;
}

bool feed_order(const ContentEntry& a, const ContentEntry& b) {
    if (a.timestamp != b.timestamp) return a.timestamp > b.timestamp;
    if (a.stream_id != b.stream_id) return a.stream_id < b.stream_id;
    return a.seq < b.seq;
}

Json FeedItem::to_json() const {
    Json j{{"entry", entry.to_json()},
           {"labels", labels},
           {"provenance",
            {{"allowed_by", ids_json(provenance.allowed_by)},
             {"denied_by", ids_json(provenance.denied_by)},
             {"labeled_by", ids_json(provenance.labeled_by)}}},
           {"ref", entry.ref().to_string()}};
    if (!payload) {
        j["unresolved"] = true;
    } else if (valid_utf8(*payload)) {
        j["payload"] = std::string(payload->begin(), payload->end());
    } else {
        j["payload_hex"] = to_hex(*payload);
    }
    if (score) j["score"] = *score;
    return j;
}

Json Feed::to_json() const {
    Json items_json = Json::array();
    for (const auto& i : items) items_json.push_back(i.to_json());
    return {{"diff", diff.to_json()},
            {"feed_id", feed_id},
            {"generated_at", generated_at},
            {"items", items_json},
            {"kind", kind},
            {"policy_digest", policy_digest.hex()},
            {"snapshot", snapshot.hex()},
            {"sources", ids_json(sources)},
            {"warnings", warnings}};
}

Feed assemble_forum_feed(const ForumConfig& config, const ContentIndex& index, const SubscriptionSet& subs,
                         const FeedOptions& opts) {
    std::vector<std::string> warnings;
    std::vector<StreamId> applied = config.moderator_streams;
    for (const auto& a : config.authority_streams) {
        if (a.locked || !subs.disabled_defaults.contains(a.stream)) applied.push_back(a.stream);
    }
    std::sort(applied.begin(), applied.end());
    applied.erase(std::unique(applied.begin(), applied.end()), applied.end());

    auto united = resolve_ids(applied, index, warnings);
    auto policy = combine_policies({united}, Combinator::DenyOverrides);
    policy.warnings.insert(warnings.begin(), warnings.end());
    for (const auto& id : config.content_streams) {
        if (!index.stream(id)) policy.warnings.insert("missing: content stream " + id.hex() + " not indexed");
    }
    auto raw = index.raw_entries(config.content_streams);
    return build_feed("forum", config.forum_id, policy, apply_filter(policy, raw, FilterMode::DenyList), index, opts);
}

Feed assemble_follow_feed(const SubscriptionSet& subs, const ContentIndex& index, const FeedOptions& opts) {
    subs.validate();
    std::vector<std::string> warnings;
    auto policy = resolve_ids({subs.follows.begin(), subs.follows.end()}, index, warnings);
    policy = without_sources(policy, subs.muted);
    policy.warnings.insert(warnings.begin(), warnings.end());
    auto raw = index.raw_entries();
    return build_feed("follow", "follow", policy, apply_filter(policy, raw, FilterMode::AllowList), index, opts);
}

Feed assemble_raw_feed(const std::string& feed_id, const std::vector<StreamId>& streams, const ContentIndex& index,
                       const FeedOptions& opts) {
    EffectivePolicy empty;
    auto raw = index.raw_entries(streams);
    return build_feed("raw", feed_id, empty, apply_filter(empty, raw, FilterMode::DenyList), index, opts);
}

ModerationDiff feed_diff(const Feed& feed_with, const Feed& raw_feed) {
    if (feed_with.snapshot != raw_feed.snapshot) {
        throw Error(ErrorCode::SnapshotMismatch, "feeds come from different index snapshots");
    }
    std::map<EntryRef, std::size_t> present;
    for (const auto& i : feed_with.items) ++present[i.entry.ref()];
    std::map<EntryRef, const HiddenItem*> why;
    for (const auto& h : feed_with.diff.hidden) why[h.ref] = &h;

    ModerationDiff out;
    for (const auto& i : raw_feed.items) {
        const auto ref = i.entry.ref();
        auto it = present.find(ref);
        if (it != present.end() && it->second > 0) {
            --it->second;
            continue;
        }
        HiddenItem h{ref, {}, HiddenItem::Reason::Denied};
        if (auto w = why.find(ref); w != why.end()) h = *w->second;
        out.hidden.push_back(std::move(h));
    }
    out.revealed_only_by = feed_with.diff.revealed_only_by;
    out.label_summary = feed_with.diff.label_summary;
    return out;
}

Json ModeratorRanking::to_json() const {
    Json arr = Json::array();
    std::size_t rank = 1;
    for (const auto& s : ranked) {
        arr.push_back({{"agreement", s.agreement},
                       {"composite", s.composite},
                       {"coverage", s.coverage},
                       {"rank", rank++},
                       {"recency_score", s.recency_score},
                       {"recency_seconds", s.recency_seconds ? Json(*s.recency_seconds) : Json(nullptr)},
                       {"stream", s.stream.hex()}});
    }
    return {{"ranked", arr}, {"warnings", warnings}};
}

ModeratorRanking rank_moderators(const std::vector<StreamId>& candidates, const ContentIndex& index,
                                 const std::vector<ModAction>& user_history, std::int64_t now,
                                 const RankingWeights& weights) {
    ModeratorRanking out;
    const auto raw = index.raw_entries();
    std::vector<const ModAction*> judged;
    for (const auto& a : user_history) {
        if (a.verb != Verb::IncludeStream && a.verb != Verb::ExcludeStream) judged.push_back(&a);
    }
    std::set<StreamId> seen;
    for (const auto& id : candidates) {
        if (!seen.insert(id).second) continue;
        const auto* s = index.stream(id);
        if (!s || s->genesis.kind != StreamKind::Moderation) {
            out.warnings.push_back("unresolvable: candidate " + id.hex());
            continue;
        }
        auto policy = resolve_policy(*s, index.fetcher());
        ModeratorScore m;
        m.stream = id;
        if (!raw.empty()) {
            auto n = std::count_if(raw.begin(), raw.end(), [&](const ContentEntry& e) { return acted_on(policy, e); });
            m.coverage = static_cast<double>(n) / static_cast<double>(raw.size());
        }
        if (judged.empty()) {
            m.agreement = 0.5;
        } else {
            auto n = std::count_if(judged.begin(), judged.end(), [&](const ModAction* a) { return matches_action(policy, *a); });
            m.agreement = static_cast<double>(n) / static_cast<double>(judged.size());
        }
        std::int64_t latest = 0;
        for (const auto& src : policy.sources) {
            if (const auto* st = index.stream(src)) latest = std::max(latest, local_policy(*st).latest_action);
        }
        if (latest > 0) {
            m.recency_seconds = std::max<std::int64_t>(0, now - latest);
            m.recency_score = std::exp(-(static_cast<double>(*m.recency_seconds) / 86400.0) / weights.recency_days);
        }
        m.composite = weights.agreement * m.agreement + weights.coverage * m.coverage + weights.recency * m.recency_score;
        out.ranked.push_back(m);
    }
    std::sort(out.ranked.begin(), out.ranked.end(), [](const ModeratorScore& a, const ModeratorScore& b) {
        if (a.composite != b.composite) return a.composite > b.composite;
        return a.stream < b.stream;
    });
    return out;
}

} // namespace plurinet

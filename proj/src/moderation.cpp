#include "plurinet/moderation.hpp"

#include <algorithm>
#include <deque>

namespace plurinet {

namespace {

Json sources_json(const SourceSet& s) {
    Json out = Json::array();
    for (const auto& id : s) out.push_back(id.hex());
    return out;
}

bool matches(const std::map<Target, SourceSet>& set, const std::vector<Target>& targets, SourceSet& sources) {
    bool any = false;
    for (const auto& t : targets) {
        auto it = set.find(t);
        if (it == set.end()) continue;
        any = true;
        sources.insert(it->second.begin(), it->second.end());
    }
    return any;
}

void merge_into(EffectivePolicy& into, const EffectivePolicy& from) {
    for (const auto& [t, s] : from.allow) into.allow[t].insert(s.begin(), s.end());
    for (const auto& [t, s] : from.deny) into.deny[t].insert(s.begin(), s.end());
    for (const auto& [t, m] : from.labels) into.labels[t].insert(m.begin(), m.end());
    for (const auto& [t, m] : from.scores) into.scores[t].insert(m.begin(), m.end());
    into.sources.insert(from.sources.begin(), from.sources.end());
    into.warnings.insert(from.warnings.begin(), from.warnings.end());
}

template <typename Map>
Map intersect_keys(const std::vector<EffectivePolicy>& policies, Map EffectivePolicy::*member) {
    Map out;
    for (const auto& [t, v] : policies.front().*member) {
        bool everywhere = std::all_of(policies.begin() + 1, policies.end(),
                                      [&](const EffectivePolicy& p) { return (p.*member).contains(t); });
        if (!everywhere) continue;
        for (const auto& p : policies) {
            const auto& other = (p.*member).at(t);
            out[t].insert(other.begin(), other.end());
        }
    }
    return out;
}

enum class Stance { None, Allow, Deny };

Stance stance_of(const EffectivePolicy& p, const Target& t) {
    if (p.deny.contains(t)) return Stance::Deny;
    if (p.allow.contains(t)) return Stance::Allow;
    return Stance::None;
}

} // namespace

std::string Target::encode() const {
    switch (kind) {
    case Kind::Ref: return EntryRef{StreamId{value}, seq}.to_string();
    case Kind::ContentHash: return "sha256:" + value.hex();
    case Kind::Principal: return "ed25519:" + value.hex();
    case Kind::Stream: return "stream:" + value.hex();
    }
    return {};
}

std::optional<Target> Target::parse(std::string_view text) {
    if (auto ref = EntryRef::parse(text)) return Target::of(*ref);
    auto with = [&](std::string_view prefix, Kind kind) -> std::optional<Target> {
        if (!text.starts_with(prefix)) return std::nullopt;
        auto rest = text.substr(prefix.size());
        auto d = Digest::from_hex(rest);
        if (!d || d->hex() != rest) return std::nullopt;
        return Target{kind, *d, 0};
    };
    if (auto t = with("sha256:", Kind::ContentHash)) return t;
    if (auto t = with("ed25519:", Kind::Principal)) return t;
    if (auto t = with("stream:", Kind::Stream)) return t;
    return std::nullopt;
}

std::string_view to_string(Verb v) {
    switch (v) {
    case Verb::Allow: return "ALLOW";
    case Verb::Deny: return "DENY";
    case Verb::Label: return "LABEL";
    case Verb::Score: return "SCORE";
    case Verb::IncludeStream: return "INCLUDE_STREAM";
    case Verb::ExcludeStream: return "EXCLUDE_STREAM";
    }
    return "DENY";
}

std::optional<Verb> parse_verb(std::string_view text) {
    for (auto v : {Verb::Allow, Verb::Deny, Verb::Label, Verb::Score, Verb::IncludeStream, Verb::ExcludeStream}) {
        if (to_string(v) == text) return v;
    }
    return std::nullopt;
}

std::string_view to_string(FilterMode m) { return m == FilterMode::DenyList ? "DENY_LIST" : "ALLOW_LIST"; }

void ModAction::validate() const {
    auto bad = [](const std::string& why) { throw Error(ErrorCode::InvalidArgument, "mod action: " + why); };
    const bool stream_verb = verb == Verb::IncludeStream || verb == Verb::ExcludeStream;
    if (stream_verb != (target.kind == Target::Kind::Stream)) {
        bad(stream_verb ? "INCLUDE/EXCLUDE_STREAM need a stream target" : "stream targets need INCLUDE/EXCLUDE_STREAM");
    }
    if ((verb == Verb::Label) != label.has_value()) bad("label is required for LABEL and only LABEL");
    if ((verb == Verb::Score) != score.has_value()) bad("score is required for SCORE and only SCORE");
    if (label && (label->empty() || label->size() > kMaxLabelBytes)) bad("label must be 1..64 bytes");
    if (score && (*score < -100 || *score > 100)) bad("score must be in [-100, 100]");
    if (reason && reason->size() > kMaxReasonBytes) bad("reason exceeds 1024 bytes");
}

Json ModAction::to_json() const {
    Json j{{"target", target.encode()}, {"verb", std::string(to_string(verb))}};
    if (label) j["label"] = *label;
    if (score) j["score"] = *score;
    if (reason) j["reason"] = *reason;
    return j;
}

ModAction ModAction::from_json(const Json& j) {
    static const std::set<std::string> known = {"label", "reason", "score", "target", "verb"};
    if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "mod action must be an object");
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw Error(ErrorCode::InvalidArgument, "unknown mod action field '" + key + "'");
    }
    ModAction a;
    auto verb = parse_verb(require_string(j, "verb"));
    if (!verb) throw Error(ErrorCode::InvalidArgument, "unknown verb");
    a.verb = *verb;
    auto target = Target::parse(require_string(j, "target"));
    if (!target) throw Error(ErrorCode::InvalidArgument, "malformed target");
    a.target = *target;
    if (j.contains("label")) a.label = require_string(j, "label");
    if (j.contains("score")) a.score = static_cast<int>(require_int(j, "score"));
    if (j.contains("reason")) a.reason = require_string(j, "reason");
    a.validate();
    return a;
}

AppendResult append_action(StreamState stream, const Keypair& author, const ModAction& action,
                           const AppendOptions& opts) {
    if (stream.genesis.kind != StreamKind::Moderation) {
        throw Error(ErrorCode::InvalidArgument, "mod actions go on MODERATION streams");
    }
    action.validate();
    auto text = canonical_dump(action.to_json());
    return append(std::move(stream), author, PayloadKind::ModAction, as_bytes(text), opts);
}

Json EffectivePolicy::to_json() const {
    Json j = Json::object();
    j["allow"] = Json::object();
    for (const auto& [t, s] : allow) j["allow"][t.encode()] = sources_json(s);
    j["deny"] = Json::object();
    for (const auto& [t, s] : deny) j["deny"][t.encode()] = sources_json(s);
    j["labels"] = Json::object();
    for (const auto& [t, marks] : labels) {
        Json arr = Json::array();
        for (const auto& m : marks) {
            arr.push_back({{"label", m.label}, {"principal", "ed25519:" + m.principal.hex()}, {"source", m.source.hex()}});
        }
        j["labels"][t.encode()] = std::move(arr);
    }
    j["scores"] = Json::object();
    for (const auto& [t, marks] : scores) {
        Json arr = Json::array();
        for (const auto& m : marks) {
            arr.push_back({{"principal", "ed25519:" + m.principal.hex()}, {"score", m.score}, {"source", m.source.hex()}});
        }
        j["scores"][t.encode()] = std::move(arr);
    }
    j["sources"] = sources_json(sources);
    j["warnings"] = Json(std::vector<std::string>(warnings.begin(), warnings.end()));
    return j;
}

Digest EffectivePolicy::digest() const { return sha256(canonical_dump(to_json())); }

EffectivePolicy without_sources(const EffectivePolicy& policy, const SourceSet& drop) {
    if (drop.empty()) return policy;
    EffectivePolicy out;
    auto filter_sources = [&](const std::map<Target, SourceSet>& in, std::map<Target, SourceSet>& dst) {
        for (const auto& [t, s] : in) {
            SourceSet kept;
            std::set_difference(s.begin(), s.end(), drop.begin(), drop.end(), std::inserter(kept, kept.end()));
            if (!kept.empty()) dst[t] = std::move(kept);
        }
    };
    filter_sources(policy.allow, out.allow);
    filter_sources(policy.deny, out.deny);
    for (const auto& [t, marks] : policy.labels) {
        for (const auto& m : marks) {
            if (!drop.contains(m.source)) out.labels[t].insert(m);
        }
    }
    for (const auto& [t, marks] : policy.scores) {
        for (const auto& m : marks) {
            if (!drop.contains(m.source)) out.scores[t].insert(m);
        }
    }
    for (const auto& s : policy.sources) {
        if (!drop.contains(s)) out.sources.insert(s);
    }
    out.warnings = policy.warnings;
    return out;
}

LocalPolicy local_policy(const StreamState& stream) {
    LocalPolicy lp;
    lp.stream = stream.id();
    for (const auto& e : stream.entries) {
        if (e.payload_kind != PayloadKind::ModAction || !e.body) continue;
        ModAction a;
        try {
            a = ModAction::from_json(*e.body);
        } catch (const Error& err) {
            lp.warnings.push_back("stream " + stream.id().hex() + " seq " + std::to_string(e.seq) +
                                  ": ignored malformed action (" + err.what() + ")");
            continue;
        }
        const Digest author = e.author.id();
        switch (a.verb) {
        case Verb::Allow:
        case Verb::Deny: lp.visibility[a.target] = {a.verb == Verb::Allow, author}; break;
        case Verb::Label: lp.labels[{a.target, *a.label}] = author; break;
        case Verb::Score: lp.scores[a.target] = {*a.score, author}; break;
        case Verb::IncludeStream:
            lp.includes.insert(StreamId{a.target.value});
            lp.excludes.erase(StreamId{a.target.value});
            break;
        case Verb::ExcludeStream:
            lp.excludes.insert(StreamId{a.target.value});
            lp.includes.erase(StreamId{a.target.value});
            break;
        }
        lp.latest_action = std::max(lp.latest_action, e.timestamp);
        ++lp.action_count;
    }
    return lp;
}

EffectivePolicy resolve_policy(const StreamState& root, const StreamFetcher& fetch, int depth_limit) {
    if (depth_limit < 1) throw Error(ErrorCode::InvalidArgument, "depth_limit must be at least 1");

    std::map<StreamId, std::optional<StreamState>> fetched;
    std::map<StreamId, LocalPolicy> locals;
    fetched.emplace(root.id(), root);

    auto lookup = [&](const StreamId& id) -> const StreamState* {
        auto it = fetched.find(id);
        if (it == fetched.end()) {
            std::optional<StreamState> got;
            try {
                got = fetch ? fetch(id) : std::nullopt;
            } catch (const std::exception&) {
                got.reset();
            }
            it = fetched.emplace(id, std::move(got)).first;
        }
        return it->second ? &*it->second : nullptr;
    };
    auto local = [&](const StreamId& id) -> const LocalPolicy& {
        auto it = locals.find(id);
        if (it == locals.end()) it = locals.emplace(id, local_policy(*lookup(id))).first;
        return it->second;
    };

    // Breadth-first include closure avoiding `banned`; returns streams in visit order.
    auto closure = [&](const std::set<StreamId>& banned, std::set<std::string>* warnings) {
        std::vector<StreamId> order{root.id()};
        std::map<StreamId, int> depth{{root.id(), 0}};
        for (std::size_t i = 0; i < order.size(); ++i) {
            const StreamId current = order[i];
            for (const auto& child : local(current).includes) {
                if (banned.contains(child) || depth.contains(child)) continue;
                if (depth[current] + 1 > depth_limit) {
                    if (warnings) warnings->insert("depth limit: stream " + child.hex() + " not expanded");
                    continue;
                }
                const StreamState* st = lookup(child);
                if (!st) {
                    if (warnings) warnings->insert("unreachable: stream " + child.hex() + " could not be fetched");
                    continue;
                }
                if (st->genesis.kind != StreamKind::Moderation) {
                    if (warnings) warnings->insert("ignored: stream " + child.hex() + " is not a moderation stream");
                    continue;
                }
                depth[child] = depth[current] + 1;
                order.push_back(child);
            }
        }
        return order;
    };

    std::set<StreamId> excluded;
    for (const auto& id : closure({}, nullptr)) {
        const auto& ex = local(id).excludes;
        excluded.insert(ex.begin(), ex.end());
    }
    excluded.erase(root.id());

    EffectivePolicy policy;
    const auto reached = closure(excluded, &policy.warnings);
    const std::set<StreamId> members(reached.begin(), reached.end());

    // Depth-first pass in StreamId order to report each cycle entry point once.
    {
        std::set<StreamId> on_stack, done;
        std::vector<std::pair<StreamId, std::vector<StreamId>>> stack;
        auto children_of = [&](const StreamId& id) {
            std::vector<StreamId> kids;
            for (const auto& c : local(id).includes) {
                if (members.contains(c)) kids.push_back(c);
            }
            std::reverse(kids.begin(), kids.end()); // pop from back in ascending order
            return kids;
        };
        stack.emplace_back(root.id(), children_of(root.id()));
        on_stack.insert(root.id());
        while (!stack.empty()) {
            auto& [node, pending] = stack.back();
            if (pending.empty()) {
                on_stack.erase(node);
                done.insert(node);
                stack.pop_back();
                continue;
            }
            StreamId next = pending.back();
            pending.pop_back();
            if (on_stack.contains(next)) {
                policy.warnings.insert("cycle: stream " + next.hex() + " re-entered; skipped");
            } else if (!done.contains(next)) {
                on_stack.insert(next);
                stack.emplace_back(next, children_of(next));
            }
        }
    }

    for (const auto& id : reached) {
        const auto& lp = local(id);
        for (const auto& [t, v] : lp.visibility) (v.first ? policy.allow : policy.deny)[t].insert(id);
        for (const auto& [key, author] : lp.labels) policy.labels[key.first].insert({key.second, author, id});
        for (const auto& [t, v] : lp.scores) policy.scores[t].insert({v.first, v.second, id});
        policy.warnings.insert(lp.warnings.begin(), lp.warnings.end());
        policy.sources.insert(id);
    }
    return policy;
}

EffectivePolicy combine_policies(const std::vector<EffectivePolicy>& policies, Combinator combinator) {
    EffectivePolicy out;
    if (policies.empty()) return out;
    if (combinator == Combinator::Intersection) {
        out.allow = intersect_keys(policies, &EffectivePolicy::allow);
        out.deny = intersect_keys(policies, &EffectivePolicy::deny);
        out.scores = intersect_keys(policies, &EffectivePolicy::scores);
        // labels intersect on (target, label text)
        for (const auto& [t, marks] : policies.front().labels) {
            for (const auto& m : marks) {
                bool everywhere = std::all_of(policies.begin(), policies.end(), [&](const EffectivePolicy& p) {
                    auto it = p.labels.find(t);
                    return it != p.labels.end() &&
                           std::any_of(it->second.begin(), it->second.end(),
                                       [&](const LabelMark& o) { return o.label == m.label; });
                });
                if (!everywhere) continue;
                for (const auto& p : policies) {
                    for (const auto& o : p.labels.at(t)) {
                        if (o.label == m.label) out.labels[t].insert(o);
                    }
                }
            }
        }
        for (const auto& p : policies) {
            out.sources.insert(p.sources.begin(), p.sources.end());
            out.warnings.insert(p.warnings.begin(), p.warnings.end());
        }
        return out;
    }
    for (const auto& p : policies) merge_into(out, p);
    if (combinator == Combinator::DenyOverrides) {
        std::erase_if(out.allow, [&](const auto& kv) { return out.deny.contains(kv.first); });
    }
    return out;
}

std::vector<Target> targets_of(const ContentEntry& e) {
    return {Target::of(e.ref()), Target::of_hash(e.content_hash), Target::of(e.author)};
}

FilterResult apply_filter(const EffectivePolicy& policy, const std::vector<ContentEntry>& raw, FilterMode mode) {
    FilterResult out;
    for (const auto& e : raw) {
        const auto targets = targets_of(e);
        SourceSet deny_src, allow_src;
        const bool denied = matches(policy.deny, targets, deny_src);
        const bool allowed = matches(policy.allow, targets, allow_src);

        std::set<std::string> labels;
        for (const auto& t : targets) {
            if (auto it = policy.labels.find(t); it != policy.labels.end()) {
                for (const auto& m : it->second) labels.insert(m.label);
            }
        }
        for (const auto& l : labels) ++out.diff.label_summary[l];

        if (mode == FilterMode::DenyList) {
            if (denied && !allowed) {
                out.diff.hidden.push_back({e.ref(), std::move(deny_src), HiddenItem::Reason::Denied});
                continue;
            }
            if (denied) out.diff.revealed_only_by[e.ref()] = allow_src;
        } else {
            if (denied) {
                out.diff.hidden.push_back({e.ref(), std::move(deny_src), HiddenItem::Reason::Denied});
                continue;
            }
            if (!allowed) {
                out.diff.hidden.push_back({e.ref(), policy.sources, HiddenItem::Reason::NotAllowed});
                continue;
            }
            out.diff.revealed_only_by[e.ref()] = allow_src;
        }
        out.visible.push_back(e);
    }
    return out;
}

Json ModerationDiff::to_json() const {
    Json h = Json::array();
    for (const auto& item : hidden) {
        h.push_back({{"reason", item.reason == HiddenItem::Reason::Denied ? "DENIED" : "NOT_ALLOWED"},
                     {"ref", item.ref.to_string()},
                     {"sources", sources_json(item.sources)}});
    }
    Json revealed = Json::object();
    for (const auto& [ref, s] : revealed_only_by) revealed[ref.to_string()] = sources_json(s);
    Json labels = Json::object();
    for (const auto& [l, n] : label_summary) labels[l] = n;
    return Json{{"hidden", h}, {"label_summary", labels}, {"revealed_only_by", revealed}};
}

ContentionReport compare_policies(const EffectivePolicy& a, const EffectivePolicy& b,
                                  const std::vector<ContentEntry>& raw) {
    ContentionReport r;
    std::set<Target> universe;
    for (const auto* p : {&a, &b}) {
        for (const auto& [t, _] : p->allow) universe.insert(t);
        for (const auto& [t, _] : p->deny) universe.insert(t);
    }
    for (const auto& t : universe) {
        const Stance sa = stance_of(a, t), sb = stance_of(b, t);
        if (sa != sb && (sa == Stance::Deny || sb == Stance::Deny)) r.contested_targets.push_back(t);
        if (sa == sb) r.agreed_targets.push_back(t);
        if (sa != Stance::None && sb == Stance::None) r.a_only.push_back(t);
        if (sb != Stance::None && sa == Stance::None) r.b_only.push_back(t);
    }
    auto hidden_set = [&](const EffectivePolicy& p) {
        std::set<EntryRef> out;
        for (const auto& h : apply_filter(p, raw, FilterMode::DenyList).diff.hidden) out.insert(h.ref);
        return out;
    };
    const auto ha = hidden_set(a), hb = hidden_set(b);
    for (const auto& e : raw) {
        const bool in_a = ha.contains(e.ref()), in_b = hb.contains(e.ref());
        if (in_a != in_b) r.contested_items.push_back(e.ref());
        if (in_a && in_b) r.agreed_hidden.push_back(e.ref());
    }
    return r;
}

ContentionReport compare_streams(const StreamState& a, const StreamState& b, const std::vector<ContentEntry>& raw,
                                 const StreamFetcher& fetch, int depth_limit) {
    return compare_policies(resolve_policy(a, fetch, depth_limit), resolve_policy(b, fetch, depth_limit), raw);
}

Json ContentionReport::to_json() const {
    auto targets = [](const std::vector<Target>& ts) {
        Json out = Json::array();
        for (const auto& t : ts) out.push_back(t.encode());
        return out;
    };
    auto refs = [](const std::vector<EntryRef>& rs) {
        Json out = Json::array();
        for (const auto& r : rs) out.push_back(r.to_string());
        return out;
    };
    return Json{{"a_only", targets(a_only)},
                {"agreed_hidden", refs(agreed_hidden)},
                {"agreed_targets", targets(agreed_targets)},
                {"b_only", targets(b_only)},
                {"contested_items", refs(contested_items)},
                {"contested_targets", targets(contested_targets)}};
}

} // namespace plurinet

#include <doctest.h>

#include <random>

#include "oracles/policy_oracle.hpp"
#include "plurinet/moderation.hpp"
#include "support.hpp"

using namespace plurinet;

namespace {

struct ModWorld {
    std::map<StreamId, StreamState> streams;
    std::map<StreamId, Keypair> owners;

    StreamId create(const std::string& name, StreamKind kind = StreamKind::Moderation) {
        auto kp = fixture::key(static_cast<std::uint8_t>(100 + streams.size()));
        auto s = create_stream(kp, name, kind, {}, fixture::kEpoch);
        owners.emplace(s.id(), kp);
        streams.emplace(s.id(), s);
        return s.id();
    }
    void act(const StreamId& id, Verb verb, Target target, std::optional<std::string> label = {},
             std::optional<int> score = {}) {
        ModAction a{verb, target, label, score, std::nullopt};
        streams[id] = append_action(streams.at(id), owners.at(id), a).state;
    }
    StreamFetcher fetcher() const {
        return [this](const StreamId& id) -> std::optional<StreamState> {
            auto it = streams.find(id);
            if (it == streams.end()) return std::nullopt;
            return it->second;
        };
    }
    EffectivePolicy resolve(const StreamId& root, int depth = kDefaultDepthLimit) const {
        return resolve_policy(streams.at(root), fetcher(), depth);
    }
};

Target principal_target(std::uint8_t fill) { return Target::of(fixture::key(fill).principal()); }

std::size_t count_prefix(const std::set<std::string>& warnings, const std::string& prefix) {
    return static_cast<std::size_t>(std::count_if(warnings.begin(), warnings.end(),
                                                  [&](const std::string& w) { return w.rfind(prefix, 0) == 0; }));
}

} // namespace

TEST_CASE("mod action validation") {
    auto t = principal_target(1);
    CHECK_NOTHROW(ModAction{Verb::Deny, t, {}, {}, {}}.validate());
    CHECK_THROWS_AS((ModAction{Verb::Label, t, {}, {}, {}}.validate()), Error);
    CHECK_THROWS_AS((ModAction{Verb::Deny, t, "x", {}, {}}.validate()), Error);
    CHECK_THROWS_AS((ModAction{Verb::Label, t, std::string(65, 'l'), {}, {}}.validate()), Error);
    CHECK_NOTHROW((ModAction{Verb::Label, t, std::string(64, 'l'), {}, {}}.validate()));
    CHECK_THROWS_AS((ModAction{Verb::Score, t, {}, 101, {}}.validate()), Error);
    CHECK_NOTHROW((ModAction{Verb::Score, t, {}, -100, {}}.validate()));
    CHECK_THROWS_AS((ModAction{Verb::Deny, t, {}, {}, std::string(1025, 'r')}.validate()), Error);
    CHECK_THROWS_AS((ModAction{Verb::IncludeStream, t, {}, {}, {}}.validate()), Error);

    ModAction a{Verb::Label, t, "satire", {}, "because"};
    auto back = ModAction::from_json(a.to_json());
    CHECK(back.verb == Verb::Label);
    CHECK(back.target == t);
    CHECK(back.label == "satire");
    CHECK(back.reason == "because");
    CHECK(canonical_dump(a.to_json()) == canonical_dump(back.to_json()));
}

TEST_CASE("targets encode and parse") {
    auto sid = StreamId::derive(fixture::key(1).principal(), "s");
    for (const auto& t : {Target::of(EntryRef{sid, 3}), Target::of_hash(sha256("x")), principal_target(2),
                          Target::of(sid)}) {
        CHECK(Target::parse(t.encode()) == t);
    }
    CHECK(Target::of(sid).encode() == "stream:" + sid.hex());
    CHECK_FALSE(Target::parse("nope:1"));
}

TEST_CASE("append_action requires a moderation stream") {
    auto kp = fixture::key(1);
    auto content = create_stream(kp, "c", StreamKind::Content, {});
    CHECK_THROWS_AS(append_action(content, kp, {Verb::Deny, principal_target(2), {}, {}, {}}), Error);
}

TEST_CASE("resolve: deny list and last-writer-wins") {
    ModWorld w;
    auto a = w.create("a");
    auto p1 = principal_target(1), p2 = principal_target(2);
    w.act(a, Verb::Deny, p1);
    w.act(a, Verb::Deny, p2);
    auto pol = w.resolve(a);
    CHECK(pol.deny.size() == 2);
    CHECK(pol.deny.contains(p1));
    CHECK(pol.deny.contains(p2));
    CHECK(pol.allow.empty());
    CHECK(pol.sources == SourceSet{a});

    auto b = w.create("b");
    w.act(b, Verb::Deny, p1);
    w.act(b, Verb::Allow, p1);
    auto pb = w.resolve(b);
    CHECK(pb.allow.contains(p1));
    CHECK(pb.deny.empty());
}

TEST_CASE("resolve: label and score last-wins per key") {
    ModWorld w;
    auto a = w.create("a");
    auto t = principal_target(1);
    w.act(a, Verb::Score, t, {}, 10);
    w.act(a, Verb::Score, t, {}, -5);
    w.act(a, Verb::Label, t, "x");
    w.act(a, Verb::Label, t, "y");
    auto pol = w.resolve(a);
    REQUIRE(pol.scores.at(t).size() == 1);
    CHECK(pol.scores.at(t).begin()->score == -5);
    CHECK(pol.labels.at(t).size() == 2);
}

TEST_CASE("resolve: mutual inclusion terminates with one cycle warning") {
    ModWorld w;
    auto a = w.create("a");
    auto b = w.create("b");
    w.act(a, Verb::IncludeStream, Target::of(b));
    w.act(b, Verb::IncludeStream, Target::of(a));
    auto pol = w.resolve(a);
    CHECK(pol.sources == SourceSet{a, b});
    CHECK(count_prefix(pol.warnings, "cycle:") == 1);
}

TEST_CASE("resolve: inclusion unions policies (explicit path enumeration oracle)") {
    ModWorld w;
    auto a = w.create("a");
    auto b = w.create("b");
    auto p1 = principal_target(1), p3 = principal_target(3);
    w.act(a, Verb::IncludeStream, Target::of(b));
    w.act(b, Verb::Deny, p3);
    w.act(a, Verb::Deny, p1);
    auto pol = w.resolve(a);
    CHECK(pol.sources == SourceSet{a, b});
    CHECK(pol.deny.size() == 2);
    CHECK(pol.deny.at(p1) == SourceSet{a});
    CHECK(pol.deny.at(p3) == SourceSet{b});
}

TEST_CASE("resolve: exclusion removes an included stream's contributions") {
    ModWorld w;
    auto root = w.create("root");
    auto b = w.create("b");
    auto c = w.create("c");
    w.act(root, Verb::IncludeStream, Target::of(b));
    w.act(b, Verb::IncludeStream, Target::of(c));
    w.act(c, Verb::Deny, principal_target(4));
    w.act(root, Verb::ExcludeStream, Target::of(c));
    auto pol = w.resolve(root);
    CHECK(pol.sources == SourceSet{root, b});
    CHECK(pol.deny.empty());

    // Later include of the same stream by the root wins over its earlier exclude.
    w.act(root, Verb::IncludeStream, Target::of(c));
    CHECK(w.resolve(root).sources == SourceSet{root, b, c});
}

TEST_CASE("resolve: depth limit truncates with a warning") {
    ModWorld w;
    std::vector<StreamId> chain;
    for (int i = 0; i < 5; ++i) chain.push_back(w.create("c" + std::to_string(i)));
    for (int i = 0; i + 1 < 5; ++i) w.act(chain[i], Verb::IncludeStream, Target::of(chain[i + 1]));
    auto pol = w.resolve(chain[0], 2);
    CHECK(pol.sources == SourceSet{chain[0], chain[1], chain[2]});
    CHECK(count_prefix(pol.warnings, "depth limit:") == 1);
    CHECK(w.resolve(chain[0]).sources.size() == 5);
    CHECK_THROWS_AS(w.resolve(chain[0], 0), Error);
}

TEST_CASE("resolve: fetch failures and non-moderation includes degrade to warnings") {
    ModWorld w;
    auto a = w.create("a");
    auto content = w.create("content", StreamKind::Content);
    auto ghost = StreamId::derive(fixture::key(9).principal(), "ghost");
    w.act(a, Verb::IncludeStream, Target::of(ghost));
    w.act(a, Verb::IncludeStream, Target::of(content));
    w.act(a, Verb::Deny, principal_target(1));
    auto pol = w.resolve(a);
    CHECK(pol.sources == SourceSet{a});
    CHECK(count_prefix(pol.warnings, "unreachable:") == 1);
    CHECK(count_prefix(pol.warnings, "ignored:") == 1);
    CHECK(pol.deny.size() == 1);

    auto throwing = [](const StreamId&) -> std::optional<StreamState> { throw std::runtime_error("boom"); };
    auto p2 = resolve_policy(w.streams.at(a), throwing);
    CHECK(p2.sources == SourceSet{a});
}

TEST_CASE("resolve: adversarial cyclic graphs warn once per cycle entry point") {
    std::mt19937_64 rng(11);
    for (int round = 0; round < 20; ++round) {
        ModWorld w;
        std::vector<StreamId> ids;
        for (int i = 0; i < 50; ++i) ids.push_back(w.create("n" + std::to_string(i)));
        oracle::Graph g;
        for (const auto& id : ids) g.streams[id.hex()] = {id.hex(), {}, true};
        for (int i = 0; i < 50; ++i) {
            int edges = 1 + static_cast<int>(rng() % 3);
            for (int k = 0; k < edges; ++k) {
                auto to = ids[rng() % ids.size()];
                w.act(ids[i], Verb::IncludeStream, Target::of(to));
                g.streams[ids[i].hex()].actions.push_back({"INCLUDE_STREAM", "stream:" + to.hex(), ""});
            }
        }
        g.root = ids[0].hex();
        auto pol = w.resolve(ids[0], 64);
        auto members = oracle::reached_by_relaxation(g, 64);
        CHECK(pol.sources.size() == members.size());
        CHECK(count_prefix(pol.warnings, "cycle:") == oracle::cycle_entry_points(g, members));
    }

    // A 50-stream ring has exactly one entry point.
    ModWorld ring;
    std::vector<StreamId> ids;
    for (int i = 0; i < 50; ++i) ids.push_back(ring.create("r" + std::to_string(i)));
    for (int i = 0; i < 50; ++i) ring.act(ids[i], Verb::IncludeStream, Target::of(ids[(i + 1) % 50]));
    auto pol = ring.resolve(ids[0], 64);
    CHECK(pol.sources.size() == 50);
    CHECK(count_prefix(pol.warnings, "cycle:") == 1);
}

TEST_CASE("combine: union, intersection, deny-overrides") {
    auto s = StreamId::derive(fixture::key(1).principal(), "s");
    auto a = principal_target(1), b = principal_target(2), c = principal_target(3), x = principal_target(4);
    EffectivePolicy p, q;
    p.deny = {{a, {s}}, {b, {s}}};
    q.deny = {{b, {s}}, {c, {s}}};
    auto u = combine_policies({p, q}, Combinator::Union);
    CHECK(u.deny.size() == 3);
    auto i = combine_policies({p, q}, Combinator::Intersection);
    CHECK(i.deny.size() == 1);
    CHECK(i.deny.contains(b));

    EffectivePolicy allow_x, deny_x;
    allow_x.allow = {{x, {s}}};
    deny_x.deny = {{x, {s}}};
    auto d = combine_policies({allow_x, deny_x}, Combinator::DenyOverrides);
    CHECK(d.allow.empty());
    CHECK(d.deny.contains(x));
    CHECK(combine_policies({}, Combinator::Union) == EffectivePolicy{});
}

TEST_CASE("property: union laws and deny-overrides containment on random policies") {
    std::mt19937_64 rng(5);
    std::vector<Target> universe;
    for (std::uint8_t i = 0; i < 12; ++i) universe.push_back(principal_target(i));
    std::vector<StreamId> sources;
    for (int i = 0; i < 4; ++i) sources.push_back(StreamId::derive(fixture::key(50).principal(), std::to_string(i)));

    for (int round = 0; round < 200; ++round) {
        auto p = oracle::random_policy(rng, universe, sources);
        auto q = oracle::random_policy(rng, universe, sources);
        auto r = oracle::random_policy(rng, universe, sources);
        using C = Combinator;
        CHECK(combine_policies({p, q}, C::Union) == combine_policies({q, p}, C::Union));
        CHECK(combine_policies({combine_policies({p, q}, C::Union), r}, C::Union) ==
              combine_policies({p, combine_policies({q, r}, C::Union)}, C::Union));
        CHECK(combine_policies({p, p}, C::Union) == p);

        auto d = combine_policies({p, q}, C::DenyOverrides);
        auto u = combine_policies({p, q}, C::Union);
        CHECK(d.deny == u.deny);
        for (const auto& [t, _] : d.allow) {
            CHECK_FALSE(d.deny.contains(t));
            CHECK(u.allow.contains(t));
        }
        auto inter = combine_policies({p, q}, C::Intersection);
        for (const auto& [t, _] : inter.deny) CHECK((p.deny.contains(t) && q.deny.contains(t)));
    }
}

TEST_CASE("apply_filter: identities of both modes") {
    std::mt19937_64 rng(1);
    auto w = oracle::random_world(rng);
    EffectivePolicy empty;
    auto deny = apply_filter(empty, w.raw, FilterMode::DenyList);
    CHECK(deny.visible.size() == w.raw.size());
    CHECK(deny.diff.hidden.empty());
    auto allow = apply_filter(empty, w.raw, FilterMode::AllowList);
    CHECK(allow.visible.empty());
    CHECK(allow.diff.hidden.size() == w.raw.size());
}

TEST_CASE("apply_filter: deny an author over mixed raw") {
    ModWorld w;
    auto alice = fixture::key(1), bob = fixture::key(2);
    auto wall = create_stream(alice, "wall", StreamKind::Content, {alice.principal(), bob.principal()});
    for (int i = 0; i < 10; ++i) {
        wall = append(wall, i % 3 == 0 ? bob : alice, PayloadKind::Post, as_bytes("m" + std::to_string(i))).state;
    }
    auto mod = w.create("mod");
    w.act(mod, Verb::Deny, Target::of(bob.principal()));
    auto result = apply_filter(w.resolve(mod), wall.entries, FilterMode::DenyList);
    CHECK(result.diff.hidden.size() == 4);
    for (const auto& e : result.visible) CHECK(e.author == alice.principal());
    for (const auto& h : result.diff.hidden) CHECK(h.sources == SourceSet{mod});
}

TEST_CASE("apply_filter: an explicit allow exempts from deny") {
    ModWorld w;
    auto alice = fixture::key(1);
    auto wall = fixture::posts(create_stream(alice, "wall", StreamKind::Content, {}), alice, 3);
    auto strict = w.create("strict");
    auto lenient = w.create("lenient");
    w.act(strict, Verb::Deny, Target::of(alice.principal()));
    w.act(lenient, Verb::Allow, Target::of(wall.entries[1].ref()));
    auto pol = combine_policies({w.resolve(strict), w.resolve(lenient)}, Combinator::Union);
    auto r = apply_filter(pol, wall.entries, FilterMode::DenyList);
    REQUIRE(r.visible.size() == 1);
    CHECK(r.visible[0].seq == 2);
    CHECK(r.diff.revealed_only_by.at(wall.entries[1].ref()) == SourceSet{lenient});
    w.act(strict, Verb::Deny, Target::of(wall.entries[1].ref()));
    auto forced = apply_filter(combine_policies({w.resolve(strict), w.resolve(lenient)}, Combinator::DenyOverrides),
                               wall.entries, FilterMode::DenyList);
    CHECK(forced.visible.empty());
}

TEST_CASE("property: resolve and apply_filter agree with the brute-force oracle") {
    std::mt19937_64 rng(2024);
    int mismatches = 0;
    for (int round = 0; round < 120; ++round) {
        auto w = oracle::random_world(rng);
        const int depth = 1 + static_cast<int>(rng() % 3);
        auto policy = resolve_policy(w.mods[0], w.fetcher(), depth);
        auto expected_sources = oracle::resolve_sources(w.graph, depth);
        std::set<std::string> got_sources;
        for (const auto& s : policy.sources) got_sources.insert(s.hex());
        if (got_sources != expected_sources) ++mismatches;

        for (auto mode : {FilterMode::DenyList, FilterMode::AllowList}) {
            auto result = apply_filter(policy, w.raw, mode);
            std::vector<EntryRef> visible;
            std::size_t hidden_i = 0;
            for (const auto& e : w.raw) {
                auto v = oracle::judge(w.graph, expected_sources, e, mode == FilterMode::AllowList);
                if (v.visible) {
                    visible.push_back(e.ref());
                    continue;
                }
                if (hidden_i >= result.diff.hidden.size()) {
                    ++mismatches;
                    continue;
                }
                const auto& h = result.diff.hidden[hidden_i++];
                std::set<std::string> srcs;
                for (const auto& s : h.sources) srcs.insert(s.hex());
                const bool reason_ok = (h.reason == HiddenItem::Reason::Denied) == (v.reason == "DENIED");
                if (!(h.ref == e.ref()) || srcs != v.sources || !reason_ok) ++mismatches;
            }
            std::vector<EntryRef> got;
            for (const auto& e : result.visible) got.push_back(e.ref());
            if (got != visible || hidden_i != result.diff.hidden.size()) ++mismatches;
        }
    }
    CHECK(mismatches == 0);
}

TEST_CASE("property: filter soundness, monotonicity, transparency, purity") {
    std::mt19937_64 rng(77);
    for (int round = 0; round < 100; ++round) {
        auto w = oracle::random_world(rng);
        auto policy = resolve_policy(w.mods[0], w.fetcher(), 3);
        auto before = w.raw;
        for (auto mode : {FilterMode::DenyList, FilterMode::AllowList}) {
            auto r = apply_filter(policy, w.raw, mode);
            CHECK(r.visible.size() + r.diff.hidden.size() == w.raw.size());
            std::size_t vi = 0, hi = 0;
            for (const auto& e : w.raw) {
                if (vi < r.visible.size() && r.visible[vi].ref() == e.ref()) ++vi;
                else if (hi < r.diff.hidden.size() && r.diff.hidden[hi].ref == e.ref()) ++hi;
            }
            CHECK(vi == r.visible.size());
            CHECK(hi == r.diff.hidden.size());
            for (const auto& h : r.diff.hidden) CHECK_FALSE(h.sources.empty());
        }
        CHECK(std::equal(before.begin(), before.end(), w.raw.begin(), w.raw.end()));

        auto bigger = policy;
        const auto& e = w.raw[rng() % w.raw.size()];
        bigger.deny[Target::of(e.author)].insert(w.mods[0].id());
        auto small_v = apply_filter(policy, w.raw, FilterMode::DenyList).visible.size();
        auto big_v = apply_filter(bigger, w.raw, FilterMode::DenyList).visible.size();
        CHECK(big_v <= small_v);
    }
}

TEST_CASE("compare_streams: reflexivity, disjoint denials, symmetric difference") {
    ModWorld w;
    auto alice = fixture::key(1), bob = fixture::key(2), carol = fixture::key(3);
    auto wall = create_stream(alice, "wall", StreamKind::Content,
                              {alice.principal(), bob.principal(), carol.principal()});
    for (const auto* k : {&alice, &bob, &carol}) wall = append(wall, *k, PayloadKind::Post, as_bytes("hi")).state;
    auto a = w.create("a");
    auto b = w.create("b");
    w.act(a, Verb::Deny, Target::of(alice.principal()));
    w.act(b, Verb::Deny, Target::of(bob.principal()));

    auto self = compare_streams(w.streams.at(a), w.streams.at(a), wall.entries, w.fetcher());
    CHECK(self.contested_targets.empty());
    CHECK(self.contested_items.empty());

    auto r = compare_streams(w.streams.at(a), w.streams.at(b), wall.entries, w.fetcher());
    CHECK(r.contested_targets.size() == 2);
    CHECK(r.contested_items.size() == 2);
    CHECK(r.a_only.size() == 1);
    CHECK(r.b_only.size() == 1);

    std::mt19937_64 rng(8);
    for (int round = 0; round < 50; ++round) {
        auto world = oracle::random_world(rng);
        if (world.mods.size() < 2) continue;
        auto pa = resolve_policy(world.mods[0], world.fetcher());
        auto pb = resolve_policy(world.mods[1], world.fetcher());
        auto report = compare_policies(pa, pb, world.raw);
        std::set<EntryRef> va, vb, expected;
        for (const auto& e : apply_filter(pa, world.raw, FilterMode::DenyList).visible) va.insert(e.ref());
        for (const auto& e : apply_filter(pb, world.raw, FilterMode::DenyList).visible) vb.insert(e.ref());
        for (const auto& e : world.raw) {
            if (va.contains(e.ref()) != vb.contains(e.ref())) expected.insert(e.ref());
        }
        CHECK(std::set<EntryRef>(report.contested_items.begin(), report.contested_items.end()) == expected);
    }
}

TEST_CASE("policy digest is deterministic and sensitive") {
    ModWorld w;
    auto a = w.create("a");
    w.act(a, Verb::Deny, principal_target(1));
    auto p = w.resolve(a);
    CHECK(p.digest() == w.resolve(a).digest());
    auto q = p;
    q.deny.clear();
    CHECK_FALSE(p.digest() == q.digest());
    CHECK(without_sources(p, {a}).deny.empty());
}

#include <doctest.h>

#include <fstream>

#include "plurinet/migration.hpp"
#include "plurinet/service.hpp"
#include "support.hpp"

using namespace plurinet;
namespace fs = std::filesystem;

namespace {

std::string file_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

NodeConfig config_at(const fs::path& dir, std::vector<BlobStoreConfig> stores = {}) {
    NodeConfig c;
    c.data_dir = dir;
    c.stores = std::move(stores);
    return c;
}

// A forum with one content stream of `n` posts whose bytes live in the
// node's primary store, and a moderation stream denying post 2.
struct Forum {
    StreamState wall;
    StreamState mods;
    ForumConfig config;
};

Forum seed_forum(Node& node, int n = 6) {
    auto author = fixture::key(21);
    auto mod = fixture::key(22);
    Forum f;
    f.wall = create_stream(author, "wall", StreamKind::Content, {}, fixture::kEpoch);
    for (int i = 1; i <= n; ++i) {
        auto text = "post " + std::to_string(i);
        node.put_blob(as_bytes(text), Attribution{f.wall.id(), author.principal().id()});
        f.wall = append(f.wall, author, PayloadKind::Post, as_bytes(text), {.timestamp = fixture::kEpoch + i}).state;
    }
    f.mods = create_stream(mod, "mods", StreamKind::Moderation, {}, fixture::kEpoch);
    f.mods = append_action(f.mods, mod, {Verb::Deny, Target::of(f.wall.entries[1].ref()), {}, {}, {}},
                           {.timestamp = fixture::kEpoch + 100})
                 .state;
    node.streams().insert(f.wall);
    node.streams().insert(f.mods);
    f.config = {"f", {f.wall.id()}, {f.mods.id()}, {}};
    return f;
}

std::string feed_bytes(Node& node, const ForumConfig& forum) {
    FeedOptions o;
    o.now = fixture::kEpoch + 1000;
    return canonical_dump(assemble_forum_feed(forum, *node.index(), {}, o).to_json());
}

} // namespace

TEST_CASE("export then import reproduces stream files byte for byte") {
    fixture::TempDir a_dir, b_dir, bundle_dir;
    Node a(config_at(a_dir.path()));
    auto f = seed_forum(a);
    SubscriptionSet subs;
    subs.user = fixture::key(23).principal();
    subs.follows.insert(f.mods.id());
    a.add_subscription(subs);
    for (const auto& h : a.referenced_blobs(f.wall.id())) {
        a.add_hint(issue_hint(a.key(), h, a.primary_store()->locator(), fixture::kEpoch + 50));
    }

    auto bundle = export_bundle(a);
    CHECK(bundle.warnings.empty());
    CHECK(bundle.manifest.created_at == fixture::kEpoch + 100);
    write_bundle(bundle, bundle_dir.path());

    Node b(config_at(b_dir.path()));
    auto report = import_bundle(b, read_bundle(bundle_dir.path()));
    CHECK(report.streams_imported == 2);
    CHECK(report.entries_imported == 7);
    CHECK(report.blobs_imported == 6);
    CHECK(report.hints_imported == 6);
    CHECK(report.subscriptions_imported == 1);
    CHECK(report.conflicts.empty());

    for (const auto& id : {f.wall.id(), f.mods.id()}) {
        auto name = id.hex() + ".csl";
        CHECK(file_text(a_dir / "streams" / name) == file_text(b_dir / "streams" / name));
        CHECK(file_text(bundle_dir / "streams" / name) == file_text(a_dir / "streams" / name));
    }
    CHECK(feed_bytes(a, f.config) == feed_bytes(b, f.config));

    SUBCASE("a second import skips everything") {
        auto again = import_bundle(b, read_bundle(bundle_dir.path()));
        CHECK(again.streams_imported == 0);
        CHECK(again.streams_skipped == 2);
        CHECK(again.blobs_imported == 0);
        CHECK(again.blobs_skipped == 6);
        CHECK(again.hints_imported == 0);
        CHECK(again.subscriptions_imported == 0);
    }
    SUBCASE("the JSON form round trips too") {
        auto via_json = bundle_from_json(parse_json(canonical_dump(bundle_to_json(bundle))));
        CHECK(via_json.manifest.bundle_digest == bundle.manifest.bundle_digest);
        CHECK_NOTHROW(verify_bundle(via_json));
    }
}

TEST_CASE("exporting twice gives the same digest") {
    fixture::TempDir dir;
    Node node(config_at(dir.path()));
    seed_forum(node);
    auto one = export_bundle(node);
    auto two = export_bundle(node);
    CHECK(one.manifest.bundle_digest == two.manifest.bundle_digest);
    CHECK(canonical_dump(bundle_to_json(one)) == canonical_dump(bundle_to_json(two)));
}

TEST_CASE("export of a stream with a lost blob warns and keeps the entries") {
    fixture::TempDir dir;
    Node node(config_at(dir.path()));
    auto f = seed_forum(node);
    auto lost = f.wall.entries[3].content_hash;
    REQUIRE(node.primary_store()->remove(lost));
    auto b = export_bundle(node, {.streams = {f.wall.id()}});
    REQUIRE(b.warnings.size() == 1);
    CHECK(b.warnings[0].find(lost.hex()) != std::string::npos);
    CHECK(b.manifest.missing_blobs == std::vector<Digest>{lost});
    CHECK(b.manifest.streams.at(0).head_seq == 6);
    CHECK(b.blobs.size() == 5);
    CHECK_NOTHROW(verify_bundle(b));
}

TEST_CASE("tampered bundles fail with BAD_DIGEST and import nothing") {
    fixture::TempDir a_dir, b_dir, bundle_dir;
    Node a(config_at(a_dir.path()));
    auto f = seed_forum(a);
    write_bundle(export_bundle(a), bundle_dir.path());

    SUBCASE("corrupt blob") {
        auto h = f.wall.entries[0].content_hash.hex();
        std::ofstream(bundle_dir / "blobs" / h.substr(0, 2) / h, std::ios::binary | std::ios::trunc) << "evil";
    }
    SUBCASE("edited stream file") {
        auto p = bundle_dir / "streams" / (f.wall.id().hex() + ".csl");
        auto text = file_text(p);
        text.replace(text.find("\"seq\":6"), 7, "\"seq\":7");
        std::ofstream(p, std::ios::binary | std::ios::trunc) << text;
    }
    SUBCASE("edited manifest") {
        auto p = bundle_dir / "manifest.json";
        auto j = parse_json(file_text(p));
        j["created_at"] = 1;
        std::ofstream(p, std::ios::binary | std::ios::trunc) << canonical_dump(j);
    }
    try {
        Node b(config_at(b_dir.path()));
        import_bundle(b, read_bundle(bundle_dir.path()));
        FAIL("tampered bundle accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::BadDigest);
    }
    Node b(config_at(b_dir.path()));
    CHECK(b.streams().ids().empty());
}

TEST_CASE("divergent local history is a conflict and stays untouched") {
    fixture::TempDir a_dir, b_dir;
    auto owner = fixture::key(24);
    auto fork = fixture::equivocation(owner, 3, 2, 1);
    Node a(config_at(a_dir.path()));
    Node b(config_at(b_dir.path()));
    a.streams().insert(fork.a);
    b.streams().insert(fork.b);
    const auto before = file_text(b_dir / "streams" / (fork.b.id().hex() + ".csl"));

    auto report = import_bundle(b, export_bundle(a));
    REQUIRE(report.conflicts.size() == 1);
    CHECK(report.conflicts[0].stream == fork.a.id());
    REQUIRE(report.conflicts[0].evidence);
    CHECK(report.conflicts[0].evidence->first.seq == 4);
    CHECK(report.streams_imported == 0);
    CHECK(file_text(b_dir / "streams" / (fork.b.id().hex() + ".csl")) == before);
    CHECK(b.streams().get(fork.b.id())->head_seq() == 4);
}

TEST_CASE("a longer bundle extends the local prefix") {
    fixture::TempDir a_dir, b_dir;
    auto owner = fixture::key(25);
    auto s = fixture::posts(create_stream(owner, "wall", StreamKind::Content, {}, fixture::kEpoch), owner, 8);
    Node a(config_at(a_dir.path()));
    Node b(config_at(b_dir.path()));
    a.streams().insert(s);
    b.streams().insert(load_verified(s.genesis, {s.entries.begin(), s.entries.begin() + 3}));
    auto report = import_bundle(b, export_bundle(a));
    CHECK(report.entries_imported == 5);
    CHECK(file_text(a_dir / "streams" / (s.id().hex() + ".csl")) ==
          file_text(b_dir / "streams" / (s.id().hex() + ".csl")));
}

TEST_CASE("keys are exported only on request and never installed") {
    fixture::TempDir a_dir, b_dir, bundle_dir;
    Node a(config_at(a_dir.path()));
    seed_forum(a);
    CHECK_FALSE(export_bundle(a).keys);
    auto with_keys = export_bundle(a, {.streams = {}, .include_keys = true});
    REQUIRE(with_keys.keys);
    write_bundle(with_keys, bundle_dir.path());
    CHECK((fs::status(bundle_dir / "keys.json").permissions() & fs::perms::others_read) == fs::perms::none);
    Node b(config_at(b_dir.path()));
    auto before = b.key().principal();
    auto report = import_bundle(b, read_bundle(bundle_dir.path()));
    CHECK(b.key().principal() == before);
    CHECK(report.warnings.size() == 1);
}

TEST_CASE("provider switch then old store death leaves the forum feed identical") {
    fixture::TempDir dir;
    Node node(config_at(dir.path(), {{"old", StoreBackend::Memory, "", {}}, {"new", StoreBackend::Memory, "", {}}}));
    auto f = seed_forum(node);
    const auto before = feed_bytes(node, f.config);
    REQUIRE(before.find("unresolved") == std::string::npos);

    auto report = switch_provider_op(node, f.wall.id(), "old", "new", fixture::kEpoch + 500);
    CHECK(report.blobs_replicated == 6);
    CHECK(report.hints_issued == 6);
    CHECK(report.unresolved.empty());
    for (const auto& h : node.hints()) {
        CHECK(verify_hint(h));
        CHECK(h.store_url == node.stores().by_id("new")->locator());
        CHECK(h.issued_by == node.key().principal());
    }
    // the stream itself is not rewritten
    CHECK(node.streams().get(f.wall.id())->head_hash() == f.wall.head_hash());

    node.stores().by_id("old")->set_online(false);
    node.rebuild_index();
    CHECK(feed_bytes(node, f.config) == before);
}

TEST_CASE("without a switch, old store death does change the feed") {
    fixture::TempDir dir;
    Node node(config_at(dir.path(), {{"old", StoreBackend::Memory, "", {}}, {"new", StoreBackend::Memory, "", {}}}));
    auto f = seed_forum(node);
    const auto before = feed_bytes(node, f.config);
    node.stores().by_id("old")->set_online(false);
    node.rebuild_index();
    auto after = feed_bytes(node, f.config);
    CHECK(after != before);
    CHECK(after.find("\"unresolved\":true") != std::string::npos);
}

TEST_CASE("a refusing destination leaves the hash unresolved") {
    fixture::TempDir dir;
    Node node(config_at(dir.path(), {{"old", StoreBackend::Memory, "", {}}, {"new", StoreBackend::Memory, "", {}}}));
    auto f = seed_forum(node);
    auto refused = f.wall.entries[2].content_hash;
    node.stores().by_id("new")->refuse(RefusalTarget{RefusalTarget::Kind::ContentHash, refused});

    auto report = switch_provider_op(node, f.wall.id(), "old", "new", fixture::kEpoch + 500);
    CHECK(report.unresolved == std::vector<Digest>{refused});
    CHECK(report.blobs_replicated == 5);
    CHECK(report.hints_issued == 5);
    CHECK(node.hints_for(refused).empty());
    CHECK(report.warnings.size() == 1);
}

TEST_CASE("switching a stream to its own store is a no-op") {
    fixture::TempDir dir;
    Node node(config_at(dir.path(), {{"old", StoreBackend::Memory, "", {}}}));
    auto f = seed_forum(node);
    auto report = switch_provider_op(node, f.wall.id(), "old", "old", fixture::kEpoch);
    CHECK(report.blobs_replicated == 0);
    CHECK(report.hints_issued == 0);
    CHECK(report.warnings.size() == 1);
    CHECK(node.hints().empty());
    CHECK_THROWS_AS(switch_provider_op(node, f.wall.id(), "old", "missing", fixture::kEpoch), Error);
}

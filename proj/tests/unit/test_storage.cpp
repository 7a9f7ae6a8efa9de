#include <doctest.h>

#include <fstream>
#include <random>
#include <thread>

#include <openssl/sha.h>

#include "oracles/chain_oracle.hpp"
#include "plurinet/storage.hpp"
#include "support.hpp"

using namespace plurinet;

namespace {

Bytes random_bytes(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Bytes out(n);
    for (auto& b : out) b = static_cast<std::uint8_t>(rng());
    return out;
}

std::string oracle_hash(const Bytes& b) {
    return oracle::sha256_hex(std::string(b.begin(), b.end()));
}

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::InvalidArgument;
}

} // namespace

TEST_CASE("put/get round trip and content addressing on every local backend") {
    fixture::TempDir dir;
    std::vector<std::shared_ptr<BlobStore>> stores = {std::make_shared<MemoryBlobStore>("m"),
                                                      std::make_shared<FilesystemBlobStore>("f", dir.path())};
    for (auto& store : stores) {
        CAPTURE(store->id());
        auto h = store->put(as_bytes("hello"));
        CHECK(h.hex() == "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
        auto blob = store->get(h);
        REQUIRE(blob);
        CHECK(blob->bytes == to_bytes("hello"));
        CHECK(blob->hash == h);

        CHECK(store->put(as_bytes("hello")) == h);
        CHECK(store->list().size() == 1);

        CHECK_FALSE(store->get(sha256("unknown")));
        CHECK_FALSE(store->contains(sha256("unknown")));

        for (std::uint64_t i = 0; i < 20; ++i) {
            auto b = random_bytes(1 + i * 37, i);
            auto hb = store->put(b);
            CHECK(hb.hex() == oracle_hash(b));
            CHECK(store->get(hb)->bytes == b);
        }
    }
}

TEST_CASE("filesystem layout shards by the first two hex chars") {
    fixture::TempDir dir;
    FilesystemBlobStore store("f", dir.path());
    auto h = store.put(as_bytes("hello"));
    auto expected = dir.path() / "2c" / h.hex().substr(2);
    CHECK(store.path_for(h) == expected);
    CHECK(std::filesystem::exists(expected));
}

TEST_CASE("refused hash: put refused, existing copy deleted, other stores unaffected") {
    MemoryBlobStore a("a");
    MemoryBlobStore b("b");
    auto h = a.put(as_bytes("contested"));
    b.put(as_bytes("contested"));

    a.refuse({RefusalTarget::Kind::ContentHash, h});
    CHECK_FALSE(a.get(h));
    CHECK_FALSE(a.contains(h));
    CHECK(code_of([&] { a.put(as_bytes("contested")); }) == ErrorCode::Refused);

    CHECK(b.get(h));
    CHECK(b.refusals().empty());

    StoreSet set;
    set.add(std::shared_ptr<BlobStore>(&a, [](BlobStore*) {}));
    set.add(std::shared_ptr<BlobStore>(&b, [](BlobStore*) {}));
    auto resolved = resolve(h, {}, set);
    REQUIRE(resolved);
    CHECK(resolved->bytes == to_bytes("contested"));
}

TEST_CASE("refusal by principal and by stream requires attribution") {
    auto bob = fixture::key(2);
    auto sid = StreamId::derive(bob.principal(), "wall");
    MemoryBlobStore store("s");
    store.refuse({RefusalTarget::Kind::Principal, bob.principal().id()});
    Attribution by_bob{.stream = std::nullopt, .author = bob.principal().id()};
    CHECK(code_of([&] { store.put(as_bytes("x"), by_bob); }) == ErrorCode::Refused);
    CHECK_NOTHROW(store.put(as_bytes("x")));

    MemoryBlobStore other("o");
    auto kept = other.put(as_bytes("y"), Attribution{.stream = sid, .author = std::nullopt});
    other.refuse({RefusalTarget::Kind::Stream, sid.value});
    CHECK_FALSE(other.get(kept));
    CHECK(code_of([&] { other.put(as_bytes("z"), Attribution{.stream = sid, .author = std::nullopt}); }) ==
          ErrorCode::Refused);
}

TEST_CASE("refusal targets encode and parse") {
    auto id = sha256("x");
    for (auto kind : {RefusalTarget::Kind::ContentHash, RefusalTarget::Kind::Stream, RefusalTarget::Kind::Principal}) {
        RefusalTarget t{kind, id};
        CHECK(RefusalTarget::parse(t.encode()) == t);
    }
    CHECK(RefusalTarget{RefusalTarget::Kind::ContentHash, id}.encode() == "sha256:" + id.hex());
    CHECK_FALSE(RefusalTarget::parse("md5:abc"));
}

TEST_CASE("on-disk corruption surfaces as INTEGRITY_FAILURE") {
    fixture::TempDir dir;
    FilesystemBlobStore store("f", dir.path());
    auto h = store.put(as_bytes("pristine bytes"));
    {
        std::ofstream out(store.path_for(h), std::ios::binary | std::ios::trunc);
        out << "tampered bytes";
    }
    CHECK(code_of([&] { store.get(h); }) == ErrorCode::IntegrityFailure);

    MemoryBlobStore mem("m");
    auto h2 = mem.put(as_bytes("abc"));
    mem.corrupt(h2, to_bytes("abd"));
    CHECK(code_of([&] { mem.get(h2); }) == ErrorCode::IntegrityFailure);
}

TEST_CASE("filesystem refusals and attributions persist across reopen") {
    fixture::TempDir dir;
    auto bob = fixture::key(2);
    Digest h;
    {
        FilesystemBlobStore store("f", dir.path());
        h = store.put(as_bytes("from bob"), Attribution{.stream = std::nullopt, .author = bob.principal().id()});
        store.refuse({RefusalTarget::Kind::ContentHash, sha256("other")});
    }
    FilesystemBlobStore reopened("f", dir.path());
    CHECK(reopened.refusals().size() == 1);
    CHECK(reopened.get(h));
    reopened.refuse({RefusalTarget::Kind::Principal, bob.principal().id()});
    CHECK_FALSE(reopened.get(h));
    CHECK(std::filesystem::exists(dir / "refusals.jsonl"));
}

TEST_CASE("replicate: copy, idempotence, refusal at destination, missing source") {
    MemoryBlobStore a("a");
    MemoryBlobStore b("b");
    auto h = a.put(as_bytes("payload"));
    CHECK(replicate(h, a, b));
    CHECK(b.get(h)->bytes == to_bytes("payload"));
    for (int i = 0; i < 3; ++i) CHECK_FALSE(replicate(h, a, b));
    CHECK(b.list().size() == 1);

    MemoryBlobStore c("c");
    c.refuse({RefusalTarget::Kind::ContentHash, h});
    CHECK(code_of([&] { replicate(h, a, c); }) == ErrorCode::Refused);
    CHECK(a.get(h));

    CHECK(code_of([&] { replicate(sha256("nope"), a, b); }) == ErrorCode::NotFound);
}

TEST_CASE("replicate a 10 MiB random blob filesystem to memory") {
    fixture::TempDir dir;
    FilesystemBlobStore fs("f", dir.path());
    MemoryBlobStore mem("m");
    auto big = random_bytes(10 * 1024 * 1024, 99);
    auto h = fs.put(big);
    REQUIRE(replicate(h, fs, mem));
    auto copy = mem.get(h);
    REQUIRE(copy);
    auto original = fs.get(h);
    CHECK(oracle_hash(copy->bytes) == oracle_hash(big));
    CHECK(oracle_hash(original->bytes) == h.hex());
}

TEST_CASE("hints: signature, tamper, ordering") {
    auto op = fixture::key(5);
    auto h = sha256("x");
    auto hint = issue_hint(op, h, "mem:a", 100);
    CHECK(verify_hint(hint));
    auto json_round = StorageHint::from_json(hint.to_json());
    CHECK(json_round == hint);
    CHECK(verify_hint(json_round));
    auto moved = hint;
    moved.store_url = "mem:evil";
    CHECK_FALSE(verify_hint(moved));
}

TEST_CASE("resolve: live hint, newest dead falls back to older, then fallback stores") {
    auto op = fixture::key(5);
    auto a = std::make_shared<MemoryBlobStore>("a");
    auto b = std::make_shared<MemoryBlobStore>("b");
    auto local = std::make_shared<MemoryBlobStore>("local");
    StoreSet set;
    set.add(a);
    set.add(b);
    set.add(local);
    auto h = a.get()->put(as_bytes("data"));

    std::vector<StorageHint> hints = {issue_hint(op, h, a->locator(), 100)};
    CHECK(resolve(h, hints, set));

    b->put(as_bytes("data"));
    hints.push_back(issue_hint(op, h, b->locator(), 200));
    b->set_online(false);
    auto r = resolve(h, hints, set);
    REQUIRE(r);
    CHECK(r->bytes == to_bytes("data"));

    a->set_online(false);
    CHECK_FALSE(resolve(h, hints, set));
    local->put(as_bytes("data"));
    CHECK(resolve(h, hints, set));

    CHECK_FALSE(resolve(sha256("absent"), hints, set));
}

TEST_CASE("property: resolve never returns different content under any hint permutation") {
    auto op = fixture::key(5);
    std::mt19937_64 rng(3);
    std::vector<std::shared_ptr<MemoryBlobStore>> stores;
    StoreSet set;
    for (int i = 0; i < 4; ++i) {
        stores.push_back(std::make_shared<MemoryBlobStore>("s" + std::to_string(i)));
        set.add(stores.back());
    }
    auto h = sha256("truth");
    for (int round = 0; round < 100; ++round) {
        std::vector<StorageHint> hints;
        for (auto& s : stores) {
            s->set_online(true);
            if (s->contains(h)) s->remove(h);
            if (rng() % 2) s->put(as_bytes("truth"));
            else if (rng() % 2) {
                s->put(as_bytes("truth"));
                s->corrupt(h, to_bytes("lies"));
            }
            s->set_online(rng() % 4 != 0);
            hints.push_back(issue_hint(op, h, s->locator(), static_cast<std::int64_t>(rng() % 1000)));
        }
        std::shuffle(hints.begin(), hints.end(), rng);
        auto r = resolve(h, hints, set);
        if (r) CHECK(r->bytes == to_bytes("truth"));
    }
}

TEST_CASE("offline store throws Unavailable") {
    MemoryBlobStore s("s");
    s.set_online(false);
    CHECK(code_of([&] { s.put(as_bytes("x")); }) == ErrorCode::Unavailable);
    CHECK(code_of([&] { s.get(sha256("x")); }) == ErrorCode::Unavailable);
}

TEST_CASE("concurrent puts of the same bytes converge to one copy") {
    fixture::TempDir dir;
    FilesystemBlobStore store("f", dir.path());
    MemoryBlobStore mem("m");
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t) {
        threads.emplace_back([&] {
            for (int i = 0; i < 50; ++i) {
                store.put(as_bytes("shared"));
                mem.put(as_bytes("shared"));
                store.get(sha256("shared"));
            }
        });
    }
    for (auto& t : threads) t.join();
    CHECK(store.list().size() == 1);
    CHECK(mem.list().size() == 1);
    CHECK(store.get(sha256("shared"))->bytes == to_bytes("shared"));
}

TEST_CASE("garbage collection keeps only referenced blobs") {
    MemoryBlobStore s("s");
    auto keep = s.put(as_bytes("keep"));
    s.put(as_bytes("drop1"));
    s.put(as_bytes("drop2"));
    CHECK(collect_garbage(s, {keep}) == 2);
    CHECK(s.list() == std::vector<Digest>{keep});
}

TEST_CASE("store config json rejects unknown keys") {
    auto cfg = BlobStoreConfig::from_json(
        Json::parse(R"({"store_id":"x","backend":"MEMORY","location":"","refusal":[]})"));
    CHECK(cfg.backend == StoreBackend::Memory);
    CHECK(BlobStoreConfig::from_json(cfg.to_json()).store_id == "x");
    CHECK_THROWS_AS(BlobStoreConfig::from_json(Json::parse(R"({"store_id":"x","backend":"MEMORY","bogus":1})")),
                    Error);
    auto store = open_store(cfg);
    CHECK(store->backend() == StoreBackend::Memory);
}

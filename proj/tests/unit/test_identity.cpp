#include <doctest.h>

#include <random>

#include "plurinet/identity.hpp"

using namespace plurinet;

namespace {

// RFC 8032 section 7.1, tests 1-3. Cross-checked against an independent
// Ed25519 implementation before being frozen here.
struct Rfc8032Vector {
    const char* secret;
    const char* public_key;
    const char* message;
    const char* signature;
};

constexpr Rfc8032Vector kVectors[] = {
    {"9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60",
     "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a", "",
     "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b"},
    {"4ccd089b28ff96da9db6c346ec114e0f5b8a319f35aba624da8cf6ed4fb8a6fb",
     "3d4017c3e843895a92b70aa74d1b7ebc9c982ccf2ec4968cc0cd55f12af4660c", "72",
     "92a009a9f0d4cab8720e820b5f642540a2b27b5416503f8fb3762223ebdb69da085ac1e43e15996e458f3613d0f11d8c387b2eaeb4302aeeb00d291612bb0c00"},
    {"c5aa8df43f9f837bedb7442f31dcb7b166d38535076f094b85ce3a2e0b4458f7",
     "fc51cd8e6218a1a38da47ed00230f0580816ed13ba3303ac5deb911548908025", "af82",
     "6291d657deec24024827e69c3abe01a30ce548a284743a445e3680d7db5ac3ac18ff9b538d16f290ae67f760984dc6594a7c15e9716ed28dc027beceea1ec40a"},
};

Keypair seeded(std::uint8_t fill) {
    std::array<std::uint8_t, 32> seed{};
    seed.fill(fill);
    return generate_keypair(ByteView(seed));
}

} // namespace

TEST_CASE("rfc8032 vectors: public key derivation and signatures") {
    for (const auto& v : kVectors) {
        auto seed = *from_hex(v.secret);
        auto kp = generate_keypair(ByteView(seed));
        CHECK(kp.principal().public_key_hex() == v.public_key);
        auto msg = *from_hex(v.message);
        auto sig = kp.sign(msg);
        CHECK(sig.hex() == v.signature);
        CHECK(verify(kp.principal(), msg, sig));
    }
}

TEST_CASE("principal id is sha256 of the public key") {
    auto kp = generate_keypair(ByteView(*from_hex(kVectors[0].secret)));
    // sha256(d75a98...511a), computed independently
    CHECK(kp.principal().id().hex() == "21fe31dfa154a261626bf854046fd2271b7bed4b6abe45aa58877ef47f9721b9");
    CHECK(kp.principal().encoded() == "ed25519:21fe31dfa154a261626bf854046fd2271b7bed4b6abe45aa58877ef47f9721b9");
}

TEST_CASE("keypair determinism and randomness") {
    std::array<std::uint8_t, 32> zero{};
    auto a = generate_keypair(ByteView(zero));
    auto b = generate_keypair(ByteView(zero));
    CHECK(a.principal() == b.principal());
    CHECK(a.principal().public_key_hex() == "3b6a27bcceb6a42d62a3a8d02a6f0d73653215771de243a63ac048a18b59da29");

    auto r1 = generate_keypair();
    auto r2 = generate_keypair();
    CHECK_FALSE(r1.principal() == r2.principal());
}

TEST_CASE("malformed seed length is rejected") {
    std::array<std::uint8_t, 31> short_seed{};
    CHECK_THROWS_AS(generate_keypair(ByteView(short_seed)), Error);
    try {
        generate_keypair(ByteView(short_seed));
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InvalidArgument);
    }
}

TEST_CASE("sign/verify round trip and tamper cases") {
    auto kp = seeded(7);
    const std::string msg = "moderation is data";
    auto sig = kp.sign(msg);
    CHECK(verify(kp.principal(), msg, sig));
    CHECK_FALSE(verify(kp.principal(), msg + std::string(1, '\0'), sig));
}

TEST_CASE("cross-principal signatures never verify (3-key brute force)") {
    std::vector<Keypair> keys = {seeded(1), seeded(2), seeded(3)};
    const std::string msg = "same bytes";
    for (std::size_t signer = 0; signer < keys.size(); ++signer) {
        auto sig = keys[signer].sign(msg);
        for (std::size_t checker = 0; checker < keys.size(); ++checker) {
            CHECK(verify(keys[checker].principal(), msg, sig) == (signer == checker));
        }
    }
}

TEST_CASE("property: any single flipped bit breaks verification") {
    std::mt19937_64 rng(42);
    for (int round = 0; round < 200; ++round) {
        std::array<std::uint8_t, 32> seed{};
        for (auto& b : seed) b = static_cast<std::uint8_t>(rng());
        auto kp = generate_keypair(ByteView(seed));
        Bytes msg(1 + rng() % 64);
        for (auto& b : msg) b = static_cast<std::uint8_t>(rng());
        auto sig = kp.sign(msg);
        REQUIRE(verify(kp.principal(), msg, sig));
        auto flipped = msg;
        auto bit = rng() % (flipped.size() * 8);
        flipped[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
        CHECK_FALSE(verify(kp.principal(), flipped, sig));
    }
}

TEST_CASE("principal encoding round trips") {
    for (std::uint8_t i = 0; i < 20; ++i) {
        auto p = seeded(i).principal();
        auto decoded = Principal::from_public_key_hex(p.public_key_hex());
        REQUIRE(decoded);
        CHECK(decoded->id() == p.id());
        auto id = Principal::parse_encoded_id(p.encoded());
        REQUIRE(id);
        CHECK(*id == p.id());
    }
    CHECK_FALSE(Principal::parse_encoded_id("ed25519:xyz"));
    CHECK_FALSE(Principal::parse_encoded_id("rsa:" + std::string(64, 'a')));
}

TEST_CASE("hex and base64 helpers") {
    CHECK(to_hex(Bytes{0x00, 0xff, 0x10}) == "00ff10");
    CHECK(*from_hex("00FF10") == Bytes{0x00, 0xff, 0x10});
    CHECK_FALSE(from_hex("abc"));
    CHECK_FALSE(from_hex("zz"));
    CHECK(to_base64(to_bytes("hello")) == "aGVsbG8=");
    CHECK(*from_base64("aGVsbG8=") == to_bytes("hello"));
    CHECK(sha256("hello").hex() == "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
}

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "plurinet/error.hpp"

namespace plurinet {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

std::string to_hex(ByteView bytes);
/// Decodes lowercase or uppercase hex. Returns nullopt on odd length or bad digits.
std::optional<Bytes> from_hex(std::string_view hex);
std::string to_base64(ByteView bytes);
std::optional<Bytes> from_base64(std::string_view text);

inline ByteView as_bytes(std::string_view s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}
inline Bytes to_bytes(std::string_view s) {
    auto v = as_bytes(s);
    return {v.begin(), v.end()};
}

/// A SHA-256 output.
struct Digest {
    std::array<std::uint8_t, 32> bytes{};

    std::string hex() const { return to_hex(bytes); }
    static std::optional<Digest> from_hex(std::string_view hex);
    static Digest zero() { return {}; }

    auto operator<=>(const Digest&) const = default;
};

Digest sha256(ByteView data);
inline Digest sha256(std::string_view data) { return sha256(as_bytes(data)); }

using PublicKey = std::array<std::uint8_t, 32>;

/// A public-key identity. The principal id is SHA-256 of the public key.
class Principal {
public:
    Principal() = default;
    explicit Principal(const PublicKey& key) : key_(key), id_(sha256(key)) {}

    const PublicKey& public_key() const { return key_; }
    const Digest& id() const { return id_; }

    /// `ed25519:<hex of id>`
    std::string encoded() const;
    std::string public_key_hex() const { return to_hex(key_); }

    static std::optional<Principal> from_public_key_hex(std::string_view hex);
    /// Parses the `ed25519:<id>` form. Only the id is recoverable from it.
    static std::optional<Digest> parse_encoded_id(std::string_view text);

    bool operator==(const Principal& o) const { return key_ == o.key_; }
    auto operator<=>(const Principal& o) const { return key_ <=> o.key_; }

private:
    PublicKey key_{};
    Digest id_{};
};

struct Signature {
    std::array<std::uint8_t, 64> bytes{};

    std::string hex() const { return to_hex(bytes); }
    static std::optional<Signature> from_hex(std::string_view hex);

    bool operator==(const Signature&) const = default;
};

/// Ed25519 signing identity. Secret material is only reachable through
/// secret_seed(); nothing else prints or serializes it.
class Keypair {
public:
    /// Throws InvalidArgument unless the seed is exactly 32 bytes.
    static Keypair from_seed(ByteView seed);
    static Keypair generate();

    Keypair(const Keypair&) = default;
    Keypair& operator=(const Keypair&) = default;
    ~Keypair();

    const Principal& principal() const { return principal_; }
    const std::array<std::uint8_t, 32>& secret_seed() const { return seed_; }

    Signature sign(ByteView message) const;
    Signature sign(std::string_view message) const { return sign(as_bytes(message)); }

private:
    Keypair() = default;

    std::array<std::uint8_t, 32> seed_{};
    std::array<std::uint8_t, 64> expanded_{};
    Principal principal_;
};

Keypair generate_keypair(std::optional<ByteView> seed = std::nullopt);

bool verify(const Principal& principal, ByteView message, const Signature& sig);
inline bool verify(const Principal& principal, std::string_view message, const Signature& sig) {
    return verify(principal, as_bytes(message), sig);
}

} // namespace plurinet

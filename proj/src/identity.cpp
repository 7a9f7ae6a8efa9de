#include "plurinet/identity.hpp"

#include <sodium.h>

#include <mutex>

namespace plurinet {

namespace {

void ensure_sodium() {
    static std::once_flag once;
    std::call_once(once, [] {
        if (sodium_init() < 0) {
            throw Error(ErrorCode::IoFailure, "libsodium initialization failed");
        }
    });
}

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

template <std::size_t N>
std::optional<std::array<std::uint8_t, N>> fixed_from_hex(std::string_view hex) {
    if (hex.size() != N * 2) return std::nullopt;
    auto raw = from_hex(hex);
    if (!raw) return std::nullopt;
    std::array<std::uint8_t, N> out{};
    std::copy(raw->begin(), raw->end(), out.begin());
    return out;
}

constexpr std::string_view kPrincipalPrefix = "ed25519:";

} // namespace

std::string_view error_code_name(ErrorCode code) {
    switch (code) {
    case ErrorCode::NotFound: return "NOT_FOUND";
    case ErrorCode::ValidationRejected: return "VALIDATION_REJECTED";
    case ErrorCode::Refused: return "REFUSED";
    case ErrorCode::BadDigest: return "BAD_DIGEST";
    case ErrorCode::ForkedStream: return "FORKED_STREAM";
    case ErrorCode::UnauthorizedWriter: return "UNAUTHORIZED_WRITER";
    case ErrorCode::IntegrityFailure: return "INTEGRITY_FAILURE";
    case ErrorCode::IoFailure: return "IO_FAILURE";
    case ErrorCode::PeerUnreachable: return "PEER_UNREACHABLE";
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::Unavailable: return "UNAVAILABLE";
    case ErrorCode::SnapshotMismatch: return "SNAPSHOT_MISMATCH";
    case ErrorCode::ConfigError: return "CONFIG_ERROR";
    case ErrorCode::Unauthorized: return "UNAUTHORIZED";
    }
    return "UNKNOWN";
}

int error_http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::ValidationRejected: return 422;
    case ErrorCode::Refused: return 403;
    case ErrorCode::BadDigest: return 422;
    case ErrorCode::ForkedStream: return 409;
    case ErrorCode::UnauthorizedWriter: return 403;
    case ErrorCode::IntegrityFailure: return 502;
    case ErrorCode::IoFailure: return 500;
    case ErrorCode::PeerUnreachable: return 502;
    case ErrorCode::InvalidArgument: return 400;
    case ErrorCode::Unavailable: return 503;
    case ErrorCode::SnapshotMismatch: return 409;
    case ErrorCode::ConfigError: return 400;
    case ErrorCode::Unauthorized: return 401;
    }
    return 500;
}

std::string to_hex(ByteView bytes) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.resize(bytes.size() * 2);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        out[2 * i] = digits[bytes[i] >> 4];
        out[2 * i + 1] = digits[bytes[i] & 0x0f];
    }
    return out;
}

std::optional<Bytes> from_hex(std::string_view hex) {
    if (hex.size() % 2 != 0) return std::nullopt;
    Bytes out(hex.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        int hi = hex_value(hex[2 * i]);
        int lo = hex_value(hex[2 * i + 1]);
        if (hi < 0 || lo < 0) return std::nullopt;
        out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
    }
    return out;
}

std::string to_base64(ByteView bytes) {
    ensure_sodium();
    const auto variant = sodium_base64_VARIANT_ORIGINAL;
    std::string out(sodium_base64_ENCODED_LEN(bytes.size(), variant), '\0');
    sodium_bin2base64(out.data(), out.size(), bytes.data(), bytes.size(), variant);
    out.resize(out.size() - 1); // trailing NUL
    return out;
}

std::optional<Bytes> from_base64(std::string_view text) {
    ensure_sodium();
    Bytes out(text.size() / 4 * 3 + 3);
    std::size_t len = 0;
    if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), nullptr, &len, nullptr,
                          sodium_base64_VARIANT_ORIGINAL) != 0) {
        return std::nullopt;
    }
    out.resize(len);
    return out;
}

std::optional<Digest> Digest::from_hex(std::string_view hex) {
    auto raw = fixed_from_hex<32>(hex);
    if (!raw) return std::nullopt;
    return Digest{*raw};
}

Digest sha256(ByteView data) {
    ensure_sodium();
    Digest d;
    crypto_hash_sha256(d.bytes.data(), data.data(), data.size());
    return d;
}

std::string Principal::encoded() const {
    return std::string(kPrincipalPrefix) + id_.hex();
}

std::optional<Principal> Principal::from_public_key_hex(std::string_view hex) {
    auto raw = fixed_from_hex<32>(hex);
    if (!raw) return std::nullopt;
    return Principal(*raw);
}

std::optional<Digest> Principal::parse_encoded_id(std::string_view text) {
    if (!text.starts_with(kPrincipalPrefix)) return std::nullopt;
    text.remove_prefix(kPrincipalPrefix.size());
    for (char c : text) {
        if (hex_value(c) < 0 || (c >= 'A' && c <= 'F')) return std::nullopt;
    }
    return Digest::from_hex(text);
}

std::optional<Signature> Signature::from_hex(std::string_view hex) {
    auto raw = fixed_from_hex<64>(hex);
    if (!raw) return std::nullopt;
    return Signature{*raw};
}

Keypair Keypair::from_seed(ByteView seed) {
    if (seed.size() != crypto_sign_SEEDBYTES) {
        throw Error(ErrorCode::InvalidArgument,
                    "seed must be 32 bytes, got " + std::to_string(seed.size()));
    }
    ensure_sodium();
    Keypair kp;
    std::copy(seed.begin(), seed.end(), kp.seed_.begin());
    PublicKey pk{};
    crypto_sign_seed_keypair(pk.data(), kp.expanded_.data(), kp.seed_.data());
    kp.principal_ = Principal(pk);
    return kp;
}

Keypair Keypair::generate() {
    ensure_sodium();
    std::array<std::uint8_t, 32> seed{};
    randombytes_buf(seed.data(), seed.size());
    Keypair kp = from_seed(seed);
    sodium_memzero(seed.data(), seed.size());
    return kp;
}

Keypair::~Keypair() {
    sodium_memzero(seed_.data(), seed_.size());
    sodium_memzero(expanded_.data(), expanded_.size());
}

Signature Keypair::sign(ByteView message) const {
    Signature sig;
    crypto_sign_detached(sig.bytes.data(), nullptr, message.data(), message.size(),
                         expanded_.data());
    return sig;
}

Keypair generate_keypair(std::optional<ByteView> seed) {
    return seed ? Keypair::from_seed(*seed) : Keypair::generate();
}

bool verify(const Principal& principal, ByteView message, const Signature& sig) {
    ensure_sodium();
    return crypto_sign_verify_detached(sig.bytes.data(), message.data(), message.size(),
                                       principal.public_key().data()) == 0;
}

} // namespace plurinet

#pragma once

// Shared fixtures for the unit and acceptance suites.

#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "plurinet/content_stream.hpp"
#include "plurinet/identity.hpp"

namespace fixture {

inline constexpr std::int64_t kEpoch = 1700000000;

inline plurinet::Keypair key(std::uint8_t fill) {
    std::array<std::uint8_t, 32> seed{};
    seed.fill(fill);
    return plurinet::generate_keypair(plurinet::ByteView(seed));
}

inline plurinet::Keypair key_from(std::mt19937_64& rng) {
    std::array<std::uint8_t, 32> seed{};
    for (auto& b : seed) b = static_cast<std::uint8_t>(rng());
    return plurinet::generate_keypair(plurinet::ByteView(seed));
}

inline std::filesystem::path data_file(const std::string& rel) {
    const char* root = std::getenv("PLURINET_TEST_DATA");
    return std::filesystem::path(root ? root : "tests") / rel;
}

/// A fresh scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "plurinet") {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(rng()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

/// Appends `n` text posts with timestamps kEpoch + 1, + 2, ...
inline plurinet::StreamState posts(plurinet::StreamState s, const plurinet::Keypair& author, int n,
                                   const std::string& prefix = "post") {
    for (int i = 0; i < n; ++i) {
        auto text = prefix + " " + std::to_string(s.head_seq() + 1);
        s = plurinet::append(std::move(s), author, plurinet::PayloadKind::Post, plurinet::as_bytes(text),
                             {.timestamp = kEpoch + static_cast<std::int64_t>(s.head_seq()) + 1})
                .state;
    }
    return s;
}

/// Two histories signed by the same owner that share `shared` entries and
/// then diverge: two signing sessions each append their own tail.
struct Equivocation {
    plurinet::StreamState a;
    plurinet::StreamState b;
};

inline Equivocation equivocation(const plurinet::Keypair& owner, int shared, int tail_a = 1, int tail_b = 1,
                                 const std::string& name = "equivocator") {
    auto base = posts(plurinet::create_stream(owner, name, plurinet::StreamKind::Content, {}, kEpoch), owner, shared);
    return {posts(base, owner, tail_a, "session-a"), posts(base, owner, tail_b, "session-b")};
}

} // namespace fixture

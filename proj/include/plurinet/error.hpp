#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace plurinet {

// Stable machine codes; the HTTP API and CLI report these verbatim.
enum class ErrorCode {
    NotFound,
    ValidationRejected,
    Refused,
    BadDigest,
    ForkedStream,
    UnauthorizedWriter,
    IntegrityFailure,
    IoFailure,
    PeerUnreachable,
    InvalidArgument,
    Unavailable,
    SnapshotMismatch,
    ConfigError,
    Unauthorized,
};

std::string_view error_code_name(ErrorCode code);
int error_http_status(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace plurinet

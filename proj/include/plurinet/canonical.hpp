#pragma once

#include <cstdint>
#include <ctime>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace plurinet {

using Json = nlohmann::json;

/// Canonical form: keys sorted bytewise, no insignificant whitespace,
/// integers only, UTF-8 passed through unescaped. Throws InvalidArgument
/// on floating point values or invalid UTF-8.
std::string canonical_dump(const Json& value);

/// Same layout as canonical_dump, for API and CLI output only: floats are
/// allowed (shortest round-trip form). Never used for signed records.
std::string render_json(const Json& value);

/// Parses JSON text, mapping parse errors to InvalidArgument.
Json parse_json(std::string_view text);

/// Field accessors that throw InvalidArgument naming the missing or mistyped key.
const Json& require(const Json& obj, std::string_view key);
std::string require_string(const Json& obj, std::string_view key);
std::uint64_t require_uint(const Json& obj, std::string_view key);
std::int64_t require_int(const Json& obj, std::string_view key);

inline std::int64_t unix_now() { return static_cast<std::int64_t>(std::time(nullptr)); }

} // namespace plurinet

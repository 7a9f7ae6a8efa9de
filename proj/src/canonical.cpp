#include "plurinet/canonical.hpp"

#include "plurinet/error.hpp"

namespace plurinet {

namespace {

void reject_floats(const Json& value) {
    if (value.is_number_float()) {
        throw Error(ErrorCode::InvalidArgument, "canonical JSON forbids floating point numbers");
    }
    if (value.is_structured()) {
        for (const auto& child : value) reject_floats(child);
    }
}

} // namespace

std::string canonical_dump(const Json& value) {
    reject_floats(value);
    try {
        return value.dump(-1, ' ', false, Json::error_handler_t::strict);
    } catch (const Json::type_error& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("canonical JSON: ") + e.what());
    }
}

std::string render_json(const Json& value) {
    try {
        return value.dump(-1, ' ', false, Json::error_handler_t::strict);
    } catch (const Json::type_error& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("JSON output: ") + e.what());
    }
}

Json parse_json(std::string_view text) {
    try {
        return Json::parse(text.begin(), text.end());
    } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("malformed JSON: ") + e.what());
    }
}

const Json& require(const Json& obj, std::string_view key) {
    if (!obj.is_object()) {
        throw Error(ErrorCode::InvalidArgument, "expected JSON object");
    }
    auto it = obj.find(std::string(key));
    if (it == obj.end()) {
        throw Error(ErrorCode::InvalidArgument, "missing field '" + std::string(key) + "'");
    }
    return *it;
}

std::string require_string(const Json& obj, std::string_view key) {
    const auto& v = require(obj, key);
    if (!v.is_string()) {
        throw Error(ErrorCode::InvalidArgument, "field '" + std::string(key) + "' must be a string");
    }
    return v.get<std::string>();
}

std::uint64_t require_uint(const Json& obj, std::string_view key) {
    const auto& v = require(obj, key);
    if (!v.is_number_unsigned()) {
        throw Error(ErrorCode::InvalidArgument,
                    "field '" + std::string(key) + "' must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

std::int64_t require_int(const Json& obj, std::string_view key) {
    const auto& v = require(obj, key);
    if (!v.is_number_integer()) {
        throw Error(ErrorCode::InvalidArgument, "field '" + std::string(key) + "' must be an integer");
    }
    return v.get<std::int64_t>();
}

} // namespace plurinet

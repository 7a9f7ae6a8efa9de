#include <cstdlib>
#include <fstream>
#include <set>

#include "plurinet/node.hpp"

namespace plurinet {

namespace {

template <typename F>
auto in_context(const std::string& where, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        throw Error(ErrorCode::ConfigError, where + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, where + ": " + e.what());
    }
}

const Json& array_at(const Json& j, const std::string& key) {
    const auto& v = j.at(key);
    if (!v.is_array()) throw Error(ErrorCode::ConfigError, "'" + key + "' must be an array");
    return v;
}

} // namespace

Json NodeConfig::to_json() const {
    Json stores_j = Json::array();
    for (const auto& s : stores) stores_j.push_back(s.to_json());
    Json forums_j = Json::array();
    for (const auto& f : forums) forums_j.push_back(f.to_json());
    Json defaults = Json::array();
    for (const auto& a : default_mod_streams) defaults.push_back({{"stream", a.stream.hex()}, {"locked", a.locked}});
    Json peers_j = Json::array();
    for (const auto& p : peers) peers_j.push_back(p.to_json());
    Json j = {{"data_dir", data_dir.string()}, {"listen_addr", listen_addr}, {"stores", stores_j},
              {"forums", forums_j}, {"default_mod_streams", defaults}, {"peers", peers_j}};
    if (admin_token) j["admin_token"] = *admin_token;
    return j;
}

NodeConfig NodeConfig::from_json(const Json& j) {
    if (!j.is_object()) throw Error(ErrorCode::ConfigError, "node config must be a JSON object");
    static const std::set<std::string> known = {"admin_token", "data_dir", "default_mod_streams", "forums",
                                                "listen_addr", "peers", "stores"};
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw Error(ErrorCode::ConfigError, "unknown config key '" + key + "'");
    }
    NodeConfig c;
    auto str = [&](const char* key) {
        const auto& v = j.at(key);
        if (!v.is_string()) throw Error(ErrorCode::ConfigError, std::string("'") + key + "' must be a string");
        return v.get<std::string>();
    };
    if (j.contains("data_dir")) c.data_dir = str("data_dir");
    if (j.contains("listen_addr")) {
        c.listen_addr = str("listen_addr");
        auto colon = c.listen_addr.rfind(':');
        if (colon == std::string::npos || colon + 1 == c.listen_addr.size()) {
            throw Error(ErrorCode::ConfigError, "'listen_addr' must be host:port");
        }
    }
    if (j.contains("admin_token")) c.admin_token = str("admin_token");
    if (j.contains("stores")) {
        const auto& arr = array_at(j, "stores");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            c.stores.push_back(in_context("stores[" + std::to_string(i) + "]", [&] { return BlobStoreConfig::from_json(arr[i]); }));
        }
    }
    if (j.contains("forums")) {
        const auto& arr = array_at(j, "forums");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            c.forums.push_back(in_context("forums[" + std::to_string(i) + "]", [&] { return ForumConfig::from_json(arr[i]); }));
        }
    }
    if (j.contains("default_mod_streams")) {
        const auto& arr = array_at(j, "default_mod_streams");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            c.default_mod_streams.push_back(in_context("default_mod_streams[" + std::to_string(i) + "]", [&] {
                const auto& v = arr[i];
                if (!v.is_object()) throw Error(ErrorCode::ConfigError, "must be an object");
                for (const auto& [key, _] : v.items()) {
                    if (key != "stream" && key != "locked") throw Error(ErrorCode::ConfigError, "unknown key '" + key + "'");
                }
                auto id = StreamId::from_hex(require_string(v, "stream"));
                if (!id) throw Error(ErrorCode::ConfigError, "bad stream id");
                AuthorityStream a{*id, false};
                if (v.contains("locked")) {
                    if (!v.at("locked").is_boolean()) throw Error(ErrorCode::ConfigError, "'locked' must be a boolean");
                    a.locked = v.at("locked").get<bool>();
                }
                return a;
            }));
        }
    }
    if (j.contains("peers")) {
        const auto& arr = array_at(j, "peers");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            c.peers.push_back(in_context("peers[" + std::to_string(i) + "]", [&] { return PeerAddress::from_json(arr[i]); }));
        }
    }
    return c;
}

NodeConfig load_node_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot read config file " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Json j;
    try {
        j = parse_json(text);
    } catch (const Error& e) {
        throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
    }
    auto cfg = NodeConfig::from_json(j);
    if (!cfg.data_dir.empty() && cfg.data_dir.is_relative()) cfg.data_dir = path.parent_path() / cfg.data_dir;
    return cfg;
}

NodeConfig resolve_node_config(const std::optional<std::filesystem::path>& path,
                               const std::optional<std::filesystem::path>& data_dir_override) {
    NodeConfig cfg;
    if (path) {
        cfg = load_node_config(*path);
    } else if (const char* env = std::getenv("PLURINET_CONFIG"); env && *env) {
        cfg = load_node_config(env);
    }
    if (data_dir_override) {
        cfg.data_dir = *data_dir_override;
    } else if (const char* env = std::getenv("PLURINET_DATA_DIR"); env && *env) {
        cfg.data_dir = env;
    }
    if (cfg.data_dir.empty()) cfg.data_dir = "plurinet-data";
    return cfg;
}

} // namespace plurinet

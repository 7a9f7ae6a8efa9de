#pragma once

// Deterministic tick-based network for exercising sync. Single threaded:
// every tick runs script actions, then (on round boundaries) anti-entropy
// head requests, then delivers due messages in send order. Nodes push an
// ANNOUNCE with freshly accepted entries to their neighbours and pull gaps
// with ENTRIES_REQUEST. All randomness comes from one seeded mt19937_64.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "plurinet/sync.hpp"

namespace plurinet {

inline constexpr std::int64_t kSimEpoch = 1700000000;

struct SimLink {
    int a = 0;
    int b = 0;
    std::int64_t latency = 1;
    std::uint32_t loss_ppm = 0; // loss probability in parts per million
};

struct SimPartition {
    std::int64_t start = 0; // inclusive
    std::int64_t end = 0;   // exclusive
    std::vector<std::pair<int, int>> cut;
};

struct SimNetConfig {
    std::uint64_t rng_seed = 0;
    std::vector<std::vector<int>> topology; // adjacency list, symmetric
    std::int64_t latency = 1;               // default per-link latency in ticks
    std::uint32_t loss_ppm = 0;             // default per-link loss
    std::vector<SimLink> links;             // per-link overrides
    std::vector<SimPartition> partitions;
    std::int64_t round_ticks = 4; // anti-entropy period
    std::int64_t ticks = 200;     // simulated duration

    /// Throws InvalidArgument on asymmetric topology, bad indices or ranges.
    void validate() const;
    Json to_json() const;
    /// Rejects unknown keys.
    static SimNetConfig from_json(const Json& j);

    std::size_t node_count() const { return topology.size(); }
    /// Hop-count diameter; -1 when disconnected.
    int diameter() const;
};

struct SimAction {
    enum class Kind { Create, Append, Equivocate, Offline, Online };
    std::int64_t tick = 0;
    int node = 0;
    Kind kind = Kind::Append;
    std::string stream; // name, owned by `node`
    std::string text;
    std::vector<int> to; // Equivocate: recipients of the conflicting entry

    Json to_json() const;
    static SimAction from_json(const Json& j);
};

using SimScript = std::vector<SimAction>;

struct SimScenario {
    SimNetConfig config;
    SimScript script;

    static SimScenario from_json(const Json& j);
    Json to_json() const;
};

struct SimResult {
    std::vector<std::string> trace; // one canonical JSON event per line
    std::vector<std::map<StreamId, HeadInfo>> final_heads; // per node
    std::vector<bool> converged_at; // per tick, after delivery
    std::optional<std::int64_t> converged_tick; // first tick from which convergence held to the end
    std::int64_t last_action_tick = 0;
    std::int64_t round_ticks = 1;
    std::map<std::string, StreamId> streams; // "<node>/<name>" to id
    std::size_t delivered = 0;
    std::size_t dropped = 0;

    /// Rounds from the last script action to convergence, rounded up.
    std::optional<std::int64_t> rounds_to_converge() const;
    std::string trace_text() const;
};

/// Node keys are derived from the seed and node index, so replays match.
Keypair sim_node_key(std::uint64_t rng_seed, int node);

/// Throws InvalidArgument on a malformed script (unknown node, stream
/// appended before creation, out-of-range tick).
SimResult run_simulation(const SimNetConfig& config, const SimScript& script);

} // namespace plurinet

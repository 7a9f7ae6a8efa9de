#include "plurinet/simulator.hpp"

#include <algorithm>
#include <deque>
#include <memory>
#include <random>
#include <set>

namespace plurinet {

namespace {

constexpr std::pair<SimAction::Kind, std::string_view> kActionNames[] = {
    {SimAction::Kind::Create, "create"},   {SimAction::Kind::Append, "append"},
    {SimAction::Kind::Equivocate, "equivocate"}, {SimAction::Kind::Offline, "offline"},
    {SimAction::Kind::Online, "online"},
};

std::string_view action_name(SimAction::Kind k) {
    for (const auto& [kind, name] : kActionNames) {
        if (kind == k) return name;
    }
    return "?";
}

void reject_unknown(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view what) {
    if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, std::string(what) + " must be an object");
    for (const auto& [k, _] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
            throw Error(ErrorCode::InvalidArgument, "unknown " + std::string(what) + " key '" + k + "'");
        }
    }
}

int as_node(const Json& j) {
    if (!j.is_number_integer()) throw Error(ErrorCode::InvalidArgument, "node index must be an integer");
    return j.get<int>();
}

std::pair<int, int> ordered(int a, int b) { return a < b ? std::pair{a, b} : std::pair{b, a}; }

struct InFlight {
    std::int64_t deliver_at = 0;
    std::uint64_t id = 0;
    int from = 0;
    int to = 0;
    std::string frame;
};

struct SimNode {
    Keypair key;
    std::unique_ptr<StreamStore> store;
    bool online = true;
};

class Network {
public:
    Network(const SimNetConfig& cfg, SimResult& result) : cfg_(cfg), rng_(cfg.rng_seed), out_(result) {
        for (const auto& l : cfg.links) overrides_[ordered(l.a, l.b)] = l;
        for (std::size_t i = 0; i < cfg.node_count(); ++i) {
            nodes_.push_back({sim_node_key(cfg.rng_seed, static_cast<int>(i)), std::make_unique<StreamStore>(), true});
        }
    }

    void run(SimScript script) {
        std::stable_sort(script.begin(), script.end(),
                         [](const SimAction& a, const SimAction& b) { return a.tick < b.tick; });
        std::size_t next_action = 0;
        for (tick_ = 0; tick_ < cfg_.ticks; ++tick_) {
            while (next_action < script.size() && script[next_action].tick == tick_) perform(script[next_action++]);
            if (tick_ % cfg_.round_ticks == 0) {
                for (std::size_t i = 0; i < nodes_.size(); ++i) {
                    if (!nodes_[i].online) continue;
                    for (int j : cfg_.topology[i]) {
                        SyncMessage m;
                        m.kind = SyncMessage::Kind::HeadRequest;
                        send(static_cast<int>(i), j, std::move(m));
                    }
                }
            }
            while (!queue_.empty() && queue_.begin()->first.first == tick_) {
                auto msg = std::move(queue_.begin()->second);
                queue_.erase(queue_.begin());
                deliver(msg);
            }
            out_.converged_at.push_back(converged());
        }
        tick_ = cfg_.ticks;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            std::map<StreamId, HeadInfo> heads;
            Json hs = Json::array();
            for (const auto& s : nodes_[i].store->all()) {
                heads.emplace(s->id(), head_of(*s));
                hs.push_back({{"stream", s->id().hex()}, {"head_seq", s->head_seq()},
                              {"head_hash", s->head_hash().hex()}, {"forked", s->forked}});
            }
            emit({{"event", "final"}, {"node", i}, {"heads", hs}});
            out_.final_heads.push_back(std::move(heads));
        }
    }

private:
    void emit(Json ev) {
        ev["tick"] = tick_;
        out_.trace.push_back(canonical_dump(ev));
    }

    std::pair<std::int64_t, std::uint32_t> link(int a, int b) const {
        auto it = overrides_.find(ordered(a, b));
        if (it != overrides_.end()) return {it->second.latency, it->second.loss_ppm};
        return {cfg_.latency, cfg_.loss_ppm};
    }

    bool cut(int a, int b) const {
        for (const auto& p : cfg_.partitions) {
            if (tick_ < p.start || tick_ >= p.end) continue;
            for (const auto& [x, y] : p.cut) {
                if (ordered(x, y) == ordered(a, b)) return true;
            }
        }
        return false;
    }

    double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

    void send(int from, int to, SyncMessage m) {
        m.sign(nodes_[from].key);
        const auto id = ++next_id_;
        Json ev = {{"event", "send"}, {"msg", id}, {"kind", std::string(to_string(m.kind))}, {"from", from}, {"to", to}};
        if (m.stream_id) ev["stream"] = m.stream_id->hex();
        if (!m.entries.empty()) {
            ev["from_seq"] = m.entries.front().seq;
            ev["to_seq"] = m.entries.back().seq;
        }
        auto [latency, loss] = link(from, to);
        if (cut(from, to)) {
            ev["event"] = "drop";
            ev["reason"] = "partition";
            ++out_.dropped;
            emit(std::move(ev));
            return;
        }
        if (loss > 0 && uniform() < static_cast<double>(loss) / 1e6) {
            ev["event"] = "drop";
            ev["reason"] = "loss";
            ++out_.dropped;
            emit(std::move(ev));
            return;
        }
        ev["deliver_at"] = tick_ + latency;
        emit(std::move(ev));
        queue_.emplace(std::pair{tick_ + latency, id}, InFlight{tick_ + latency, id, from, to, encode_frame(m)});
    }

    void deliver(const InFlight& msg) {
        auto& node = nodes_[msg.to];
        if (!node.online) {
            ++out_.dropped;
            emit({{"event", "drop"}, {"msg", msg.id}, {"from", msg.from}, {"to", msg.to}, {"reason", "offline"}});
            return;
        }
        ++out_.delivered;
        emit({{"event", "deliver"}, {"msg", msg.id}, {"from", msg.from}, {"to", msg.to}});
        auto frames = decode_frames(msg.frame);
        for (auto& m : frames) {
            if (!m.verify_signature() || !(m.sender && *m.sender == nodes_[msg.from].key.principal())) {
                emit({{"event", "reject"}, {"node", msg.to}, {"msg", msg.id}, {"reason", "bad message signature"}});
                continue;
            }
            handle(msg.to, msg.from, m);
        }
    }

    void handle(int self, int from, const SyncMessage& m) {
        auto& node = nodes_[self];
        switch (m.kind) {
        case SyncMessage::Kind::HeadRequest:
        case SyncMessage::Kind::EntriesRequest:
            try {
                send(self, from, answer(*node.store, node.key, m));
            } catch (const Error&) {
                // nothing to serve
            }
            break;
        case SyncMessage::Kind::HeadResponse:
            for (const auto& h : m.heads) on_head(self, from, h);
            break;
        case SyncMessage::Kind::EntriesResponse:
        case SyncMessage::Kind::Announce:
            on_entries(self, from, m);
            break;
        }
    }

    void request(int self, int from, const StreamId& id, std::uint64_t lo, std::uint64_t hi) {
        SyncMessage r;
        r.kind = SyncMessage::Kind::EntriesRequest;
        r.stream_id = id;
        r.from_seq = lo;
        r.to_seq = hi;
        send(self, from, std::move(r));
    }

    void on_head(int self, int from, const HeadInfo& h) {
        auto& store = *nodes_[self].store;
        auto local = store.get(h.stream);
        if (h.evidence && local && store.mark_forked(*h.evidence)) {
            emit({{"event", "fork"}, {"node", self}, {"stream", h.stream.hex()}, {"seq", h.evidence->first.seq},
                  {"via", "evidence"}});
            local = store.get(h.stream);
        }
        const std::uint64_t lh = local ? local->head_seq() : 0;
        if (!local) {
            request(self, from, h.stream, 1, h.head_seq);
        } else if (h.head_seq > lh) {
            if (!local->forked) request(self, from, h.stream, lh > 0 ? lh : 1, h.head_seq);
        } else if (h.head_seq > 0 && record_hash(local->entries[h.head_seq - 1]) != h.head_hash) {
            request(self, from, h.stream, h.head_seq, h.head_seq);
        }
    }

    void on_entries(int self, int from, const SyncMessage& m) {
        if (!m.genesis) {
            emit({{"event", "reject"}, {"node", self}, {"reason", "entries without genesis"}});
            return;
        }
        auto& store = *nodes_[self].store;
        const auto& id = m.genesis->stream_id;
        AcceptOutcome out;
        try {
            out = store.accept(*m.genesis, m.entries);
        } catch (const Error& e) {
            emit({{"event", "reject"}, {"node", self}, {"stream", id.hex()}, {"reason", e.what()}});
            return;
        }
        auto now = store.get(id);
        if (out.fork_detected) {
            emit({{"event", "fork"}, {"node", self}, {"stream", id.hex()}, {"seq", now->fork_evidence->first.seq},
                  {"via", "entries"}});
        }
        if (out.new_entries > 0 || out.created) {
            emit({{"event", "accept"}, {"node", self}, {"stream", id.hex()}, {"new_entries", out.new_entries},
                  {"head_seq", now->head_seq()}, {"head_hash", now->head_hash().hex()}});
            std::vector<ContentEntry> fresh(now->entries.end() - static_cast<std::ptrdiff_t>(out.new_entries),
                                            now->entries.end());
            announce(self, *now, fresh, from);
        }
        if (out.gap && !m.entries.empty()) {
            const auto lh = now ? now->head_seq() : 0;
            request(self, from, id, lh > 0 ? lh : 1, m.entries.back().seq);
        }
    }

    void announce(int self, const StreamState& s, const std::vector<ContentEntry>& fresh, int except = -1,
                  const std::vector<int>& only = {}) {
        const auto& targets = only.empty() ? cfg_.topology[self] : only;
        for (int j : targets) {
            if (j == except) continue;
            SyncMessage a;
            a.kind = SyncMessage::Kind::Announce;
            a.stream_id = s.id();
            a.genesis = s.genesis;
            a.entries = fresh;
            if (!fresh.empty()) {
                a.from_seq = fresh.front().seq;
                a.to_seq = fresh.back().seq;
            }
            send(self, j, std::move(a));
        }
    }

    StreamId stream_of(const SimAction& a) {
        auto it = out_.streams.find(std::to_string(a.node) + "/" + a.stream);
        if (it == out_.streams.end()) {
            throw Error(ErrorCode::InvalidArgument,
                        "script uses stream '" + a.stream + "' of node " + std::to_string(a.node) + " before creation");
        }
        return it->second;
    }

    void perform(const SimAction& a) {
        auto& node = nodes_[a.node];
        Json ev = {{"event", "action"}, {"action", std::string(action_name(a.kind))}, {"node", a.node}};
        const std::int64_t ts = kSimEpoch + tick_;
        switch (a.kind) {
        case SimAction::Kind::Offline:
        case SimAction::Kind::Online:
            node.online = a.kind == SimAction::Kind::Online;
            emit(std::move(ev));
            return;
        case SimAction::Kind::Create: {
            auto s = create_stream(node.key, a.stream, StreamKind::Content, {}, ts);
            if (!node.store->insert(s)) throw Error(ErrorCode::InvalidArgument, "stream '" + a.stream + "' created twice");
            out_.streams[std::to_string(a.node) + "/" + a.stream] = s.id();
            ev["stream"] = s.id().hex();
            emit(std::move(ev));
            announce(a.node, s, {});
            return;
        }
        case SimAction::Kind::Append: {
            const auto id = stream_of(a);
            auto cur = node.store->get(id);
            AppendOptions opts;
            opts.timestamp = ts;
            auto e = make_entry(*cur, node.key, PayloadKind::Post, as_bytes(a.text), opts);
            ev["stream"] = id.hex();
            ev["seq"] = e.seq;
            try {
                auto next = node.store->append(id, {e});
                emit(std::move(ev));
                announce(a.node, *next, {e});
            } catch (const Error& err) {
                emit({{"event", "reject"}, {"node", a.node}, {"stream", id.hex()}, {"reason", err.what()}});
            }
            return;
        }
        case SimAction::Kind::Equivocate: {
            const auto id = stream_of(a);
            auto cur = node.store->get(id);
            if (cur->head_seq() == 0) throw Error(ErrorCode::InvalidArgument, "equivocate needs at least one entry");
            StreamState base = *cur;
            base.entries.pop_back();
            base.forked = false;
            AppendOptions opts;
            opts.timestamp = ts;
            auto alt = make_entry(base, node.key, PayloadKind::Post, as_bytes(a.text), opts);
            ev["stream"] = id.hex();
            ev["seq"] = alt.seq;
            emit(std::move(ev));
            announce(a.node, *cur, {alt}, -1, a.to);
            return;
        }
        }
    }

    bool converged() const {
        auto view = [](const StreamStore& s) {
            std::map<StreamId, std::pair<Digest, bool>> v;
            for (const auto& st : s.all()) v.emplace(st->id(), std::pair{st->head_hash(), st->forked});
            return v;
        };
        const auto first = view(*nodes_.front().store);
        for (std::size_t i = 1; i < nodes_.size(); ++i) {
            if (view(*nodes_[i].store) != first) return false;
        }
        return true;
    }

    const SimNetConfig& cfg_;
    std::mt19937_64 rng_;
    SimResult& out_;
    std::vector<SimNode> nodes_;
    std::map<std::pair<int, int>, SimLink> overrides_;
    std::map<std::pair<std::int64_t, std::uint64_t>, InFlight> queue_;
    std::uint64_t next_id_ = 0;
    std::int64_t tick_ = 0;
};

} // namespace

void SimNetConfig::validate() const {
    const int n = static_cast<int>(topology.size());
    if (n == 0) throw Error(ErrorCode::InvalidArgument, "topology has no nodes");
    for (int i = 0; i < n; ++i) {
        std::set<int> seen;
        for (int j : topology[i]) {
            if (j < 0 || j >= n || j == i) throw Error(ErrorCode::InvalidArgument, "bad neighbour " + std::to_string(j));
            if (!seen.insert(j).second) throw Error(ErrorCode::InvalidArgument, "duplicate neighbour " + std::to_string(j));
            const auto& back = topology[j];
            if (std::find(back.begin(), back.end(), i) == back.end()) {
                throw Error(ErrorCode::InvalidArgument,
                            "topology is not symmetric: " + std::to_string(i) + "-" + std::to_string(j));
            }
        }
    }
    auto check_link = [&](int a, int b) {
        if (a < 0 || a >= n || b < 0 || b >= n) throw Error(ErrorCode::InvalidArgument, "link names an unknown node");
    };
    if (latency < 1) throw Error(ErrorCode::InvalidArgument, "latency must be at least 1 tick");
    if (loss_ppm > 1000000) throw Error(ErrorCode::InvalidArgument, "loss_ppm above 1000000");
    for (const auto& l : links) {
        check_link(l.a, l.b);
        if (l.latency < 1 || l.loss_ppm > 1000000) throw Error(ErrorCode::InvalidArgument, "bad link override");
    }
    for (const auto& p : partitions) {
        if (p.end < p.start) throw Error(ErrorCode::InvalidArgument, "partition ends before it starts");
        for (const auto& [a, b] : p.cut) check_link(a, b);
    }
    if (round_ticks < 1) throw Error(ErrorCode::InvalidArgument, "round_ticks must be positive");
    if (ticks < 1) throw Error(ErrorCode::InvalidArgument, "ticks must be positive");
}

int SimNetConfig::diameter() const {
    const int n = static_cast<int>(topology.size());
    int best = 0;
    for (int s = 0; s < n; ++s) {
        std::vector<int> dist(n, -1);
        std::deque<int> q{s};
        dist[s] = 0;
        while (!q.empty()) {
            int u = q.front();
            q.pop_front();
            for (int v : topology[u]) {
                if (dist[v] < 0) {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        for (int d : dist) {
            if (d < 0) return -1;
            best = std::max(best, d);
        }
    }
    return best;
}

Json SimNetConfig::to_json() const {
    Json links_j = Json::array();
    for (const auto& l : links) {
        links_j.push_back({{"a", l.a}, {"b", l.b}, {"latency", l.latency}, {"loss_ppm", l.loss_ppm}});
    }
    Json parts = Json::array();
    for (const auto& p : partitions) {
        Json cut = Json::array();
        for (const auto& [a, b] : p.cut) cut.push_back({a, b});
        parts.push_back({{"start", p.start}, {"end", p.end}, {"cut", cut}});
    }
    return {{"rng_seed", rng_seed}, {"topology", topology}, {"latency", latency}, {"loss_ppm", loss_ppm},
            {"links", links_j}, {"partitions", parts}, {"round_ticks", round_ticks}, {"ticks", ticks}};
}

SimNetConfig SimNetConfig::from_json(const Json& j) {
    reject_unknown(j, {"rng_seed", "topology", "latency", "loss_ppm", "links", "partitions", "round_ticks", "ticks"},
                   "simulation config");
    SimNetConfig c;
    c.rng_seed = require_uint(j, "rng_seed");
    const auto& topo = require(j, "topology");
    if (!topo.is_array()) throw Error(ErrorCode::InvalidArgument, "topology must be an array");
    for (const auto& row : topo) {
        if (!row.is_array()) throw Error(ErrorCode::InvalidArgument, "topology rows must be arrays");
        std::vector<int> adj;
        for (const auto& v : row) adj.push_back(as_node(v));
        c.topology.push_back(std::move(adj));
    }
    if (j.contains("latency")) c.latency = require_int(j, "latency");
    if (j.contains("loss_ppm")) c.loss_ppm = static_cast<std::uint32_t>(std::min<std::uint64_t>(require_uint(j, "loss_ppm"), 1000001));
    if (j.contains("links")) {
        for (const auto& l : j.at("links")) {
            reject_unknown(l, {"a", "b", "latency", "loss_ppm"}, "link");
            SimLink link{as_node(require(l, "a")), as_node(require(l, "b")), c.latency, c.loss_ppm};
            if (l.contains("latency")) link.latency = require_int(l, "latency");
            if (l.contains("loss_ppm")) link.loss_ppm = static_cast<std::uint32_t>(std::min<std::uint64_t>(require_uint(l, "loss_ppm"), 1000001));
            c.links.push_back(link);
        }
    }
    if (j.contains("partitions")) {
        for (const auto& p : j.at("partitions")) {
            reject_unknown(p, {"start", "end", "cut"}, "partition");
            SimPartition part{require_int(p, "start"), require_int(p, "end"), {}};
            for (const auto& pair : require(p, "cut")) {
                if (!pair.is_array() || pair.size() != 2) throw Error(ErrorCode::InvalidArgument, "cut entries are [a, b] pairs");
                part.cut.emplace_back(as_node(pair[0]), as_node(pair[1]));
            }
            c.partitions.push_back(std::move(part));
        }
    }
    if (j.contains("round_ticks")) c.round_ticks = require_int(j, "round_ticks");
    if (j.contains("ticks")) c.ticks = require_int(j, "ticks");
    c.validate();
    return c;
}

Json SimAction::to_json() const {
    Json j = {{"tick", tick}, {"node", node}, {"action", std::string(action_name(kind))}};
    if (!stream.empty()) j["stream"] = stream;
    if (!text.empty()) j["text"] = text;
    if (!to.empty()) j["to"] = to;
    return j;
}

SimAction SimAction::from_json(const Json& j) {
    reject_unknown(j, {"tick", "node", "action", "stream", "text", "to"}, "script action");
    SimAction a;
    a.tick = require_int(j, "tick");
    a.node = as_node(require(j, "node"));
    const auto name = require_string(j, "action");
    bool found = false;
    for (const auto& [kind, n] : kActionNames) {
        if (n == name) {
            a.kind = kind;
            found = true;
        }
    }
    if (!found) throw Error(ErrorCode::InvalidArgument, "unknown script action '" + name + "'");
    if (j.contains("stream")) a.stream = require_string(j, "stream");
    if (j.contains("text")) a.text = require_string(j, "text");
    if (j.contains("to")) {
        for (const auto& v : j.at("to")) a.to.push_back(as_node(v));
    }
    return a;
}

SimScenario SimScenario::from_json(const Json& j) {
    reject_unknown(j, {"config", "script"}, "scenario");
    SimScenario s;
    s.config = SimNetConfig::from_json(require(j, "config"));
    if (j.contains("script")) {
        for (const auto& a : j.at("script")) s.script.push_back(SimAction::from_json(a));
    }
    return s;
}

Json SimScenario::to_json() const {
    Json script_j = Json::array();
    for (const auto& a : script) script_j.push_back(a.to_json());
    return {{"config", config.to_json()}, {"script", script_j}};
}

std::optional<std::int64_t> SimResult::rounds_to_converge() const {
    if (!converged_tick) return std::nullopt;
    const auto span = *converged_tick - last_action_tick;
    return (span + round_ticks - 1) / round_ticks;
}

std::string SimResult::trace_text() const {
    std::string out;
    for (const auto& line : trace) {
        out += line;
        out += '\n';
    }
    return out;
}

Keypair sim_node_key(std::uint64_t rng_seed, int node) {
    auto seed = sha256("plurinet-sim:" + std::to_string(rng_seed) + ":" + std::to_string(node));
    return generate_keypair(ByteView(seed.bytes));
}

SimResult run_simulation(const SimNetConfig& config, const SimScript& script) {
    config.validate();
    const int n = static_cast<int>(config.node_count());
    std::set<std::string> declared;
    for (const auto& a : script) {
        if (a.node < 0 || a.node >= n) throw Error(ErrorCode::InvalidArgument, "script names unknown node " + std::to_string(a.node));
        if (a.tick < 0 || a.tick >= config.ticks) throw Error(ErrorCode::InvalidArgument, "script tick out of range");
        const bool needs_stream = a.kind == SimAction::Kind::Create || a.kind == SimAction::Kind::Append ||
                                  a.kind == SimAction::Kind::Equivocate;
        if (needs_stream && a.stream.empty()) throw Error(ErrorCode::InvalidArgument, "script action needs a stream");
        for (int t : a.to) {
            const auto& adj = config.topology[a.node];
            if (std::find(adj.begin(), adj.end(), t) == adj.end()) {
                throw Error(ErrorCode::InvalidArgument, "equivocation target " + std::to_string(t) + " is not a neighbour");
            }
        }
    }

    SimResult result;
    result.round_ticks = config.round_ticks;
    for (const auto& a : script) result.last_action_tick = std::max(result.last_action_tick, a.tick);
    Network net(config, result);
    net.run(script);

    if (!result.converged_at.empty() && result.converged_at.back()) {
        std::int64_t t = static_cast<std::int64_t>(result.converged_at.size()) - 1;
        while (t > 0 && result.converged_at[t - 1]) --t;
        result.converged_tick = std::max(t, result.last_action_tick);
    }
    return result;
}

} // namespace plurinet

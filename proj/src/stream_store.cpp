#include "plurinet/stream_store.hpp"

#include <algorithm>
#include <fstream>

namespace plurinet {

namespace fs = std::filesystem;

namespace {

bool has_writer(const StreamState& s, const Principal& p) {
    return s.is_writer(p) || std::find(s.genesis.writers.begin(), s.genesis.writers.end(), p) != s.genesis.writers.end();
}

} // namespace

bool valid_fork_evidence(const StreamState& state, const ForkEvidence& ev) {
    if (ev.first.stream_id != state.id()) return false;
    if (!detect_fork(ev.first, ev.second)) return false;
    return has_writer(state, ev.first.author) && has_writer(state, ev.second.author);
}

StreamStore::StreamStore(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(*dir_, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir_->string() + ": " + ec.message());

    std::vector<fs::path> files;
    for (const auto& de : fs::directory_iterator(*dir_)) {
        if (de.is_regular_file() && de.path().extension() == ".csl") files.push_back(de.path());
    }
    std::sort(files.begin(), files.end());

    for (const auto& path : files) {
        StreamState state;
        bool truncated = false;
        try {
            auto csl = read_csl_file(path);
            truncated = csl.truncated_tail;
            state = load_verified(csl.genesis, csl.entries);
        } catch (const Error& e) {
            throw Error(ErrorCode::IntegrityFailure, "corrupt stream file " + path.string() + ": " + e.what());
        }
        if (path.stem().string() != state.id().hex()) {
            throw Error(ErrorCode::IntegrityFailure, "stream file " + path.string() + " holds stream " + state.id().hex());
        }
        auto fork_path = *dir_ / (state.id().hex() + ".fork.json");
        if (fs::exists(fork_path)) {
            std::ifstream in(fork_path, std::ios::binary);
            std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
            try {
                auto ev = fork_evidence_from_json(parse_json(text));
                if (valid_fork_evidence(state, ev)) {
                    state.forked = true;
                    state.fork_evidence = ev;
                }
            } catch (const Error&) {
                // unreadable evidence is dropped; it can be re-learned from peers
            }
        }
        // complete final record without its newline
        if (!truncated && fs::file_size(path) != to_csl(state).size()) truncated = true;
        if (truncated) {
            write_csl_file(path, state);
            recovery_.truncated.push_back(state.id());
        }
        recovery_.loaded.push_back(state.id());
        auto s = std::make_unique<Slot>();
        s->state = std::make_shared<const StreamState>(std::move(state));
        slots_.emplace(s->state->id(), std::move(s));
    }
}

StreamStore::Slot* StreamStore::slot(const StreamId& id) const {
    std::shared_lock lock(map_mutex_);
    auto it = slots_.find(id);
    return it == slots_.end() ? nullptr : it->second.get();
}

StreamStore::Slot& StreamStore::slot_or_create(const StreamId& id) {
    std::unique_lock lock(map_mutex_);
    auto& s = slots_[id];
    if (!s) s = std::make_unique<Slot>();
    return *s;
}

std::shared_ptr<const StreamState> StreamStore::get(const StreamId& id) const {
    std::shared_lock lock(map_mutex_);
    auto it = slots_.find(id);
    return it == slots_.end() ? nullptr : it->second->state;
}

std::vector<StreamId> StreamStore::ids() const {
    std::shared_lock lock(map_mutex_);
    std::vector<StreamId> out;
    for (const auto& [id, s] : slots_) {
        if (s->state) out.push_back(id);
    }
    return out;
}

std::vector<std::shared_ptr<const StreamState>> StreamStore::all() const {
    std::shared_lock lock(map_mutex_);
    std::vector<std::shared_ptr<const StreamState>> out;
    for (const auto& [id, s] : slots_) {
        if (s->state) out.push_back(s->state);
    }
    return out;
}

std::uint64_t StreamStore::version() const {
    std::shared_lock lock(map_mutex_);
    return version_;
}

void StreamStore::publish(Slot& s, std::shared_ptr<const StreamState> next) {
    std::unique_lock lock(map_mutex_);
    s.state = std::move(next);
    ++version_;
}

void StreamStore::persist_full(const StreamState& s) {
    if (!dir_) return;
    write_csl_file(*dir_ / (s.id().hex() + ".csl"), s);
}

void StreamStore::persist_tail(const StreamState& s, std::size_t from_index) {
    if (!dir_) return;
    std::ofstream out(*dir_ / (s.id().hex() + ".csl"), std::ios::binary | std::ios::app);
    std::string lines;
    for (std::size_t i = from_index; i < s.entries.size(); ++i) {
        lines += canonical_dump(s.entries[i].to_json());
        lines += '\n';
    }
    out.write(lines.data(), static_cast<std::streamsize>(lines.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::IoFailure, "cannot append to stream file for " + s.id().hex());
}

void StreamStore::persist_fork(const StreamState& s) {
    if (!dir_ || !s.fork_evidence) return;
    auto path = *dir_ / (s.id().hex() + ".fork.json");
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << canonical_dump(fork_evidence_to_json(*s.fork_evidence)) << '\n';
        if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + tmp.string());
    }
    fs::rename(tmp, path);
}

bool StreamStore::insert(const StreamState& state) {
    auto report = verify_stream(state.genesis, state.entries);
    if (!report.ok) throw Error(ErrorCode::ValidationRejected, "refusing to store invalid stream " + state.id().hex());
    auto& s = slot_or_create(state.id());
    std::lock_guard w(s.write);
    if (s.state) return false;
    auto next = std::make_shared<StreamState>(state);
    persist_full(*next);
    if (next->forked) persist_fork(*next);
    publish(s, std::move(next));
    return true;
}

std::shared_ptr<const StreamState> StreamStore::append(const StreamId& id, const std::vector<ContentEntry>& entries) {
    auto* s = slot(id);
    if (!s) throw Error(ErrorCode::NotFound, "no stream " + id.hex());
    std::lock_guard w(s->write);
    if (!s->state) throw Error(ErrorCode::NotFound, "no stream " + id.hex());
    StreamState next = *s->state;
    const auto before = next.entries.size();
    for (const auto& e : entries) next = extend(std::move(next), e);
    auto ptr = std::make_shared<const StreamState>(std::move(next));
    persist_tail(*ptr, before);
    publish(*s, ptr);
    return ptr;
}

AcceptOutcome StreamStore::accept(const GenesisRecord& genesis, const std::vector<ContentEntry>& entries) {
    AcceptOutcome out;
    if (!verify_genesis(genesis)) throw Error(ErrorCode::ValidationRejected, "peer genesis does not verify");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].stream_id != genesis.stream_id) {
            throw Error(ErrorCode::ValidationRejected, "peer entry belongs to another stream");
        }
        if (entries[i].seq == 0 || (i > 0 && entries[i].seq != entries[i - 1].seq + 1)) {
            throw Error(ErrorCode::ValidationRejected, "peer entries are not a contiguous run");
        }
    }

    auto& s = slot_or_create(genesis.stream_id);
    std::lock_guard w(s.write);

    if (!s.state) {
        if (!entries.empty() && entries.front().seq != 1) {
            out.gap = true;
            return out;
        }
        StreamState fresh;
        try {
            fresh = load_verified(genesis, entries);
        } catch (const Error& e) {
            throw Error(ErrorCode::ValidationRejected, e.what());
        }
        auto ptr = std::make_shared<const StreamState>(std::move(fresh));
        persist_full(*ptr);
        publish(s, ptr);
        out.created = true;
        out.new_entries = entries.size();
        return out;
    }

    const auto cur = s.state;
    if (record_hash(cur->genesis) != record_hash(genesis)) {
        throw Error(ErrorCode::ValidationRejected, "peer genesis differs from local genesis");
    }

    std::size_t first_new = entries.size();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        if (e.seq > cur->head_seq()) {
            first_new = i;
            break;
        }
        const auto& mine = cur->entries[e.seq - 1];
        if (record_hash(mine) == record_hash(e)) continue;
        auto ev = detect_fork(mine, e);
        if (!ev || !valid_fork_evidence(*cur, *ev)) {
            throw Error(ErrorCode::ValidationRejected, "peer entry at seq " + std::to_string(e.seq) +
                                                           " conflicts with local history and does not verify");
        }
        if (!cur->forked) {
            auto next = std::make_shared<StreamState>(*cur);
            next->forked = true;
            next->fork_evidence = *ev;
            persist_fork(*next);
            publish(s, std::move(next));
            out.fork_detected = true;
        }
        return out;
    }
    if (first_new == entries.size()) return out;
    if (entries[first_new].seq != cur->head_seq() + 1) {
        out.gap = true;
        return out;
    }
    if (cur->forked) return out;

    StreamState next = *cur;
    try {
        for (std::size_t i = first_new; i < entries.size(); ++i) next = extend(std::move(next), entries[i]);
    } catch (const Error& e) {
        throw Error(ErrorCode::ValidationRejected, e.what());
    }
    auto ptr = std::make_shared<const StreamState>(std::move(next));
    persist_tail(*ptr, cur->entries.size());
    publish(s, ptr);
    out.new_entries = entries.size() - first_new;
    return out;
}

bool StreamStore::mark_forked(const ForkEvidence& evidence) {
    auto* s = slot(evidence.first.stream_id);
    if (!s) return false;
    std::lock_guard w(s->write);
    if (!s->state || s->state->forked || !valid_fork_evidence(*s->state, evidence)) return false;
    auto next = std::make_shared<StreamState>(*s->state);
    next->forked = true;
    next->fork_evidence = evidence;
    persist_fork(*next);
    publish(*s, std::move(next));
    return true;
}

StreamFetcher StreamStore::fetcher() const {
    return [this](const StreamId& id) -> std::optional<StreamState> {
        auto s = get(id);
        if (!s) return std::nullopt;
        return *s;
    };
}

} // namespace plurinet

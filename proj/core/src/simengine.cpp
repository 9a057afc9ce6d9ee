#include "leofl/simengine.hpp"

#include "leofl/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <utility>

namespace leofl::sim {

const char* to_string(EventKind kind) {
    switch (kind) {
    case EventKind::TransferComplete: return "transfer_complete";
    case EventKind::TrainingComplete: return "training_complete";
    case EventKind::WindowOpen: return "window_open";
    case EventKind::WindowClose: return "window_close";
    case EventKind::EvalCheckpoint: return "eval_checkpoint";
    }
    return "unknown";
}

Simulator::Simulator(double horizon_s) : m_horizon_s(horizon_s) {
    if (!(horizon_s >= 0.0)) {
        throw ConfigError("simulation horizon must be non-negative, got " +
                          std::to_string(horizon_s));
    }
}

std::uint64_t Simulator::schedule(double time_s, EventKind kind,
                                  std::function<void()> action) {
    if (!std::isfinite(time_s)) {
        throw ProtocolError("refusing to schedule event at non-finite time");
    }
    if (time_s < m_now_s) {
        throw ProtocolError("event scheduled in the past: t=" +
                            std::to_string(time_s) + " but clock is at " +
                            std::to_string(m_now_s));
    }
    const std::uint64_t seq = m_next_seq++;
    m_queue.push(Entry{time_s, seq, kind, std::move(action)});
    return seq;
}

Simulator::RunResult Simulator::run() {
    RunResult result;
    while (!m_queue.empty()) {
        if (m_stop) {
            result.stopped = true;
            break;
        }
        const Entry& top = m_queue.top();
        if (top.time_s > m_horizon_s) break; // leave post-horizon events unprocessed
        // Copy out before pop: the action may schedule and reallocate.
        Entry entry{top.time_s, top.seq, top.kind,
                    std::move(const_cast<Entry&>(top).action)};
        m_queue.pop();
        m_now_s = entry.time_s;
        entry.action();
        ++result.processed_events;
    }
    if (m_stop) result.stopped = true;
    if (m_queue.empty() && !result.stopped && m_now_s < m_horizon_s) {
        result.starved = true;
    }
    result.end_time_s = m_now_s;
    return result;
}

void TraceSink::record(double t, std::string kind, int src, int dst,
                       std::int64_t payload_bits, int round) {
    m_records.push_back(TraceRecord{t, std::move(kind), src, dst, payload_bits, round});
}

// Hand-formatted rather than built through a JSON object per line: the field
// order of the records is part of the file contract.
std::string TraceSink::to_jsonl() const {
    std::string out;
    out.reserve(m_records.size() * 96);
    char buf[64];
    for (const TraceRecord& r : m_records) {
        std::snprintf(buf, sizeof(buf), "%.6f", r.t);
        out += "{\"t\":";
        out += buf;
        out += ",\"kind\":\"";
        out += r.kind;
        out += "\",\"src\":";
        out += std::to_string(r.src);
        out += ",\"dst\":";
        out += std::to_string(r.dst);
        out += ",\"payload_bits\":";
        out += std::to_string(r.payload_bits);
        out += ",\"round\":";
        out += std::to_string(r.round);
        out += "}\n";
    }
    return out;
}

void TraceSink::write_jsonl(const std::string& path) const {
    std::ofstream file(path, std::ios::binary);
    if (!file) throw ConfigError("cannot open trace output file: " + path);
    const std::string body = to_jsonl();
    file.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!file) throw ConfigError("failed writing trace output file: " + path);
}

} // namespace leofl::sim

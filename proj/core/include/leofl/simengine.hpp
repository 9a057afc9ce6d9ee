#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <string>
#include <vector>

namespace leofl::sim {

enum class EventKind {
    TransferComplete,
    TrainingComplete,
    WindowOpen,
    WindowClose,
    EvalCheckpoint,
};

const char* to_string(EventKind kind);

// Deterministic discrete-event loop. Events run in (time, sequence) order;
// the sequence number is the scheduling order, so same-time events run
// first-scheduled-first. Scheduling into the past is a hard error: it would
// silently reorder history.
class Simulator {
public:
    explicit Simulator(double horizon_s);

    double now_s() const { return m_now_s; }
    double horizon_s() const { return m_horizon_s; }
    bool stop_requested() const { return m_stop; }
    void request_stop() { m_stop = true; }

    std::uint64_t schedule(double time_s, EventKind kind,
                           std::function<void()> action);

    // Monotone counter usable for deterministic arrival tagging.
    std::uint64_t ticket() { return m_ticket++; }

    struct RunResult {
        double end_time_s = 0.0;
        std::size_t processed_events = 0;
        bool starved = false; // queue drained before the horizon
        bool stopped = false; // a handler requested stop
    };

    // Processes events until the horizon, a stop request, or queue
    // exhaustion (clean "starved" termination).
    RunResult run();

private:
    struct Entry {
        double time_s;
        std::uint64_t seq;
        EventKind kind;
        std::function<void()> action;
    };
    struct Later {
        bool operator()(const Entry& a, const Entry& b) const {
            if (a.time_s != b.time_s) return a.time_s > b.time_s;
            return a.seq > b.seq;
        }
    };

    double m_now_s = 0.0;
    double m_horizon_s;
    bool m_stop = false;
    std::uint64_t m_next_seq = 0;
    std::uint64_t m_ticket = 0;
    std::priority_queue<Entry, std::vector<Entry>, Later> m_queue;
};

// Flat in-memory event trace, written out as line-delimited JSON. One record
// per completed transfer / training / aggregation plus bookkeeping kinds
// (eval, reschedule, expire, diagnostic).
struct TraceRecord {
    double t = 0.0;
    std::string kind;
    int src = -1;
    int dst = -1;
    std::int64_t payload_bits = 0;
    int round = 0;
};

class TraceSink {
public:
    void record(double t, std::string kind, int src, int dst,
                std::int64_t payload_bits, int round);
    const std::vector<TraceRecord>& records() const { return m_records; }
    std::string to_jsonl() const;
    void write_jsonl(const std::string& path) const;

private:
    std::vector<TraceRecord> m_records;
};

} // namespace leofl::sim

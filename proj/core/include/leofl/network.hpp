#pragma once

#include "leofl/links.hpp"
#include "leofl/orbital.hpp"
#include "leofl/simengine.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <utility>
#include <vector>

namespace leofl::net {

// Precomputed visibility windows per node pair, keyed by (min id, max id).
// Server-server pairs are deliberately absent: parameter servers are treated
// as permanently connected and handled by the transfer layer directly.
class ContactPlan {
public:
    void set(int a, int b, std::vector<orbital::ContactWindow> windows);
    bool has_pair(int a, int b) const;
    const std::vector<orbital::ContactWindow>& windows(int a, int b) const;

    // Window containing t, if any (boundaries count as inside).
    std::optional<orbital::ContactWindow> window_at(int a, int b, double t) const;
    // Window containing t, else the next one opening after t.
    std::optional<orbital::ContactWindow> next_window(int a, int b, double t) const;
    // Seconds of visibility left from t, zero when not in contact.
    double remaining_s(int a, int b, double t) const;

    struct Entry {
        int a;
        int b;
        orbital::ContactWindow window;
    };
    // Flattened copy sorted by (start, a, b) for export.
    std::vector<Entry> all_sorted() const;

    std::size_t pair_count() const { return m_windows.size(); }

private:
    static std::pair<int, int> key(int a, int b);
    std::map<std::pair<int, int>, std::vector<orbital::ContactWindow>> m_windows;
};

// Sweeps every server-satellite pair and every intra-orbit adjacent
// satellite pair over [t0, t1]. Pure geometry in, plan out.
ContactPlan build_contact_plan(const orbital::Geometry& geometry, double t0_s,
                               double t1_s, double step_s = 10.0,
                               double refine_s = 0.1);

enum class RateMode { FixedRate, ShannonCapacity };

struct LinkSettings {
    RateMode rate_mode = RateMode::FixedRate;
    double fixed_rate_bps = 16.0e6;
    links::RfLinkParams rf;
    links::FsoLinkParams fso;
    // Per-endpoint handling delays added once each per transfer.
    double proc_delay_satellite_s = 0.0;
    double proc_delay_hap_s = 0.0;
    double proc_delay_gs_s = 0.0;
};

// Point-to-point transfer scheduling on top of the event loop.
//
// Medium selection: any link touching a ground station runs over RF and is
// full duplex; all other links (satellite-satellite, satellite-HAP, HAP-HAP)
// run over optical terminals, which we model as a single half-duplex head
// per node. Concurrent optical transfers at one node serialize in request
// order.
//
// A transfer that cannot fit inside the current visibility window is retried
// at the next window; if no window remains before the horizon it is dropped
// and a diagnostic is traced.
class NetworkModel {
public:
    NetworkModel(const orbital::Geometry& geometry, const ContactPlan& plan,
                 LinkSettings settings, sim::Simulator& simulator,
                 sim::TraceSink& trace);

    bool uses_rf(int a, int b) const;
    // Physical data rate at time t given the pair's medium and geometry.
    double data_rate_bps(int a, int b, double t) const;
    // One-shot delay (serialization + propagation + processing), no queueing.
    double transfer_delay_s(int a, int b, std::int64_t bits, double t) const;

    using DeliveryCallback = std::function<void(double delivered_at_s)>;
    void transmit(int src, int dst, std::int64_t bits, double request_t,
                  int round, DeliveryCallback on_delivered);

    std::int64_t cumulative_bits() const { return m_cumulative_bits; }
    std::int64_t transfers_completed() const { return m_completed; }
    std::int64_t transfers_dropped() const { return m_dropped; }

private:
    struct Transfer {
        int src;
        int dst;
        std::int64_t bits;
        int round;
        DeliveryCallback on_delivered;
    };

    double node_proc_delay_s(int id) const;
    bool always_connected(int a, int b) const; // server-server
    void attempt(Transfer transfer, double t);
    void begin(Transfer transfer, double start_t,
               const std::optional<orbital::ContactWindow>& window);
    void drop(const Transfer& transfer, double t);

    const orbital::Geometry& m_geometry;
    const ContactPlan& m_plan;
    LinkSettings m_settings;
    sim::Simulator& m_sim;
    sim::TraceSink& m_trace;
    std::map<int, double> m_optical_busy_until_s;
    std::int64_t m_cumulative_bits = 0;
    std::int64_t m_completed = 0;
    std::int64_t m_dropped = 0;
};

} // namespace leofl::net

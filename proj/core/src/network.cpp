#include "leofl/network.hpp"

#include "leofl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace leofl::net {

namespace {
constexpr double kWindowSlack_s = 1e-9;  // tolerance when testing fit against a window edge
constexpr double kWindowStep_s = 1e-6;   // nudge past a window end when moving to the next one
} // namespace

std::pair<int, int> ContactPlan::key(int a, int b) {
    return {std::min(a, b), std::max(a, b)};
}

void ContactPlan::set(int a, int b, std::vector<orbital::ContactWindow> windows) {
    if (a == b) throw ProtocolError("contact plan pair must be two distinct nodes");
    std::sort(windows.begin(), windows.end(),
              [](const orbital::ContactWindow& lhs, const orbital::ContactWindow& rhs) {
                  return lhs.start_s < rhs.start_s;
              });
    m_windows[key(a, b)] = std::move(windows);
}

bool ContactPlan::has_pair(int a, int b) const {
    return m_windows.find(key(a, b)) != m_windows.end();
}

const std::vector<orbital::ContactWindow>& ContactPlan::windows(int a, int b) const {
    static const std::vector<orbital::ContactWindow> empty;
    auto it = m_windows.find(key(a, b));
    return it == m_windows.end() ? empty : it->second;
}

std::optional<orbital::ContactWindow> ContactPlan::window_at(int a, int b,
                                                             double t) const {
    for (const orbital::ContactWindow& w : windows(a, b)) {
        if (w.start_s > t) break;
        if (t <= w.end_s) return w;
    }
    return std::nullopt;
}

std::optional<orbital::ContactWindow> ContactPlan::next_window(int a, int b,
                                                               double t) const {
    for (const orbital::ContactWindow& w : windows(a, b)) {
        if (t <= w.end_s) return w;
    }
    return std::nullopt;
}

double ContactPlan::remaining_s(int a, int b, double t) const {
    auto w = window_at(a, b, t);
    return w ? w->end_s - t : 0.0;
}

std::vector<ContactPlan::Entry> ContactPlan::all_sorted() const {
    std::vector<Entry> out;
    for (const auto& [pair, windows] : m_windows) {
        for (const orbital::ContactWindow& w : windows) {
            out.push_back(Entry{pair.first, pair.second, w});
        }
    }
    std::sort(out.begin(), out.end(), [](const Entry& lhs, const Entry& rhs) {
        if (lhs.window.start_s != rhs.window.start_s)
            return lhs.window.start_s < rhs.window.start_s;
        if (lhs.a != rhs.a) return lhs.a < rhs.a;
        return lhs.b < rhs.b;
    });
    return out;
}

ContactPlan build_contact_plan(const orbital::Geometry& geometry, double t0_s,
                               double t1_s, double step_s, double refine_s) {
    ContactPlan plan;
    const auto& sats = geometry.satellite_ids();
    const auto& servers = geometry.server_ids();
    for (int server : servers) {
        for (int sat : sats) {
            plan.set(server, sat,
                     orbital::compute_contact_windows(geometry, server, sat, t0_s,
                                                      t1_s, step_s, refine_s));
        }
    }
    // Ring neighbours only; +1 covers both directions since pairs are
    // unordered. A two-satellite orbit yields the single distinct pair.
    for (int sat : sats) {
        const int next = geometry.ring_neighbor(sat, +1);
        if (next == sat || plan.has_pair(sat, next)) continue;
        plan.set(sat, next,
                 orbital::compute_contact_windows(geometry, sat, next, t0_s, t1_s,
                                                  step_s, refine_s));
    }
    return plan;
}

NetworkModel::NetworkModel(const orbital::Geometry& geometry,
                           const ContactPlan& plan, LinkSettings settings,
                           sim::Simulator& simulator, sim::TraceSink& trace)
    : m_geometry(geometry),
      m_plan(plan),
      m_settings(std::move(settings)),
      m_sim(simulator),
      m_trace(trace) {}

bool NetworkModel::uses_rf(int a, int b) const {
    return m_geometry.kind(a) == orbital::NodeKind::Gs ||
           m_geometry.kind(b) == orbital::NodeKind::Gs;
}

bool NetworkModel::always_connected(int a, int b) const {
    return !m_geometry.is_satellite(a) && !m_geometry.is_satellite(b);
}

double NetworkModel::node_proc_delay_s(int id) const {
    switch (m_geometry.kind(id)) {
    case orbital::NodeKind::Satellite: return m_settings.proc_delay_satellite_s;
    case orbital::NodeKind::Hap: return m_settings.proc_delay_hap_s;
    case orbital::NodeKind::Gs: return m_settings.proc_delay_gs_s;
    }
    return 0.0;
}

double NetworkModel::data_rate_bps(int a, int b, double t) const {
    if (m_settings.rate_mode == RateMode::FixedRate) return m_settings.fixed_rate_bps;
    const auto& pc = m_geometry.constants();
    const double d = std::max(m_geometry.distance_m(a, b, t), 1.0);
    if (uses_rf(a, b)) {
        const double snr = links::rf_snr(m_settings.rf, d, pc);
        return links::shannon_rate_bps(snr, m_settings.rf.bandwidth_hz);
    }
    links::FsoGain gain = links::fso_channel_gain(m_settings.fso, d);
    if (gain.outside_field_of_view || gain.gain <= 0.0) return 0.0;
    // The beam's lowest altitude decides how much turbulent atmosphere it
    // crosses; links entirely above the mixing layers see effectively none
    // and the attenuation clamps to unity.
    const double z = std::min(m_geometry.altitude_m(a), m_geometry.altitude_m(b));
    const double turbulence =
        std::max(1.0, links::fso_turbulence_loss(m_settings.fso, d, z, pc));
    const double captured = links::fso_geometric_loss(m_settings.fso, d);
    const double effective_gain = gain.gain * captured / turbulence;
    const double snr = links::fso_snr(m_settings.fso, effective_gain,
                                      m_settings.fixed_rate_bps);
    return links::shannon_rate_bps(snr, m_settings.fso.bandwidth_hz);
}

double NetworkModel::transfer_delay_s(int a, int b, std::int64_t bits,
                                      double t) const {
    const double rate = data_rate_bps(a, b, t);
    if (!(rate > 0.0) || !std::isfinite(rate)) {
        return std::numeric_limits<double>::infinity();
    }
    const double serialization = bits > 0 ? static_cast<double>(bits) / rate : 0.0;
    const double propagation = m_geometry.distance_m(a, b, t) /
                               m_geometry.constants().speed_of_light_m_s;
    return serialization + propagation + node_proc_delay_s(a) + node_proc_delay_s(b);
}

void NetworkModel::transmit(int src, int dst, std::int64_t bits, double request_t,
                            int round, DeliveryCallback on_delivered) {
    if (src == dst) throw ProtocolError("transfer source and destination are the same node");
    if (bits < 0) throw ProtocolError("transfer payload must be non-negative");
    attempt(Transfer{src, dst, bits, round, std::move(on_delivered)},
            std::max(request_t, m_sim.now_s()));
}

void NetworkModel::attempt(Transfer transfer, double t) {
    std::optional<orbital::ContactWindow> window;
    double candidate = t;
    if (!always_connected(transfer.src, transfer.dst)) {
        window = m_plan.next_window(transfer.src, transfer.dst, t);
        if (!window) {
            drop(transfer, t);
            return;
        }
        candidate = std::max(t, window->start_s);
    }
    auto shared = std::make_shared<Transfer>(std::move(transfer));
    m_sim.schedule(candidate, sim::EventKind::TransferComplete,
                   [this, shared, window]() { begin(std::move(*shared), m_sim.now_s(), window); });
}

void NetworkModel::begin(Transfer transfer, double start_t,
                         const std::optional<orbital::ContactWindow>& window) {
    const bool optical = !uses_rf(transfer.src, transfer.dst);
    if (optical) {
        const double src_busy = m_optical_busy_until_s.count(transfer.src)
                                    ? m_optical_busy_until_s.at(transfer.src)
                                    : 0.0;
        const double dst_busy = m_optical_busy_until_s.count(transfer.dst)
                                    ? m_optical_busy_until_s.at(transfer.dst)
                                    : 0.0;
        const double busy_until = std::max(src_busy, dst_busy);
        if (busy_until > start_t) {
            // Terminal occupied; re-enter the pipeline once it frees. Progress
            // is guaranteed because busy_until is strictly ahead of now.
            attempt(std::move(transfer), busy_until);
            return;
        }
    }
    const double delay = transfer_delay_s(transfer.src, transfer.dst,
                                          transfer.bits, start_t);
    if (!std::isfinite(delay)) {
        if (window) {
            attempt(std::move(transfer), window->end_s + kWindowStep_s);
        } else {
            drop(transfer, start_t); // fixed geometry, the link will never close
        }
        return;
    }
    if (window && start_t + delay > window->end_s + kWindowSlack_s) {
        // Would lose visibility mid-transfer; retry when the pair is next in
        // contact instead of wasting the partial attempt.
        attempt(std::move(transfer), window->end_s + kWindowStep_s);
        return;
    }
    const double done_t = start_t + delay;
    if (optical) {
        m_optical_busy_until_s[transfer.src] = done_t;
        m_optical_busy_until_s[transfer.dst] = done_t;
    }
    auto shared = std::make_shared<Transfer>(std::move(transfer));
    m_sim.schedule(done_t, sim::EventKind::TransferComplete, [this, shared]() {
        const double now = m_sim.now_s();
        m_cumulative_bits += shared->bits;
        ++m_completed;
        m_trace.record(now, "transfer", shared->src, shared->dst, shared->bits,
                       shared->round);
        if (shared->on_delivered) shared->on_delivered(now);
    });
}

void NetworkModel::drop(const Transfer& transfer, double t) {
    ++m_dropped;
    m_trace.record(std::max(t, m_sim.now_s()), "drop", transfer.src, transfer.dst,
                   transfer.bits, transfer.round);
}

} // namespace leofl::net

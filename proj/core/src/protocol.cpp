#include "leofl/protocol.hpp"

#include "leofl/errors.hpp"
#include "leofl/links.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace leofl::protocol {

namespace {

// splitmix64; decorrelates (seed, round) pairs fed to the trainer.
std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace

EngineBase::EngineBase(sim::Simulator& simulator, net::NetworkModel& network,
                       const orbital::Geometry& geometry,
                       const net::ContactPlan& plan,
                       nn::MlpArchitecture architecture,
                       const std::vector<data::DataShard>& shards,
                       nn::HyperParams hyper, ProtocolSettings settings,
                       nn::ModelVector initial_model, sim::TraceSink& trace,
                       EngineCallbacks callbacks)
    : m_sim(simulator),
      m_net(network),
      m_geometry(geometry),
      m_plan(plan),
      m_arch(std::move(architecture)),
      m_hyper(hyper),
      m_settings(settings),
      m_trace(trace),
      m_callbacks(std::move(callbacks)),
      m_global(std::move(initial_model)) {
    m_arch.validate();
    if (m_global.values.size() != m_arch.parameter_count()) {
        throw ConfigError("initial model length does not match the architecture");
    }
    if (m_geometry.server_ids().empty()) {
        throw ConfigError("need at least one parameter server node");
    }
    for (const data::DataShard& s : shards) {
        if (!m_geometry.is_satellite(s.owner_sat_id)) {
            throw ConfigError("shard owner " + std::to_string(s.owner_sat_id) +
                              " is not a satellite");
        }
        if (!m_shards.emplace(s.owner_sat_id, &s).second) {
            throw ConfigError("duplicate shard for satellite " +
                              std::to_string(s.owner_sat_id));
        }
    }
    for (int sat : m_geometry.satellite_ids()) {
        auto it = m_shards.find(sat);
        if (it == m_shards.end()) {
            throw ConfigError("satellite " + std::to_string(sat) +
                              " has no data shard");
        }
        const std::int64_t n = it->second->size();
        if (n <= 0) {
            throw ConfigError("satellite " + std::to_string(sat) +
                              " has an empty shard");
        }
        m_masses[sat] = n;
        m_orbit_masses[m_geometry.orbit_of(sat)] += n;
        m_orbit_rosters[m_geometry.orbit_of(sat)].push_back(sat);
    }
}

const data::DataShard& EngineBase::shard_of(int sat_id) const {
    return *m_shards.at(sat_id);
}

std::int64_t EngineBase::mass_of(int sat_id) const { return m_masses.at(sat_id); }

std::int64_t EngineBase::payload_bits(int model_count) const {
    return links::model_payload_bits(m_arch.parameter_count() * model_count,
                                     m_settings.bits_per_param,
                                     m_settings.metadata_overhead_bits);
}

nn::HyperParams EngineBase::hyper_for_round(int round) const {
    nn::HyperParams h = m_hyper;
    h.rng_seed = mix64(m_hyper.rng_seed ^
                       mix64(static_cast<std::uint64_t>(round) + 1));
    return h;
}

nn::ModelVector EngineBase::train_local(int sat_id, const nn::ModelVector& base,
                                        int round) const {
    return nn::local_train(base, m_arch, shard_of(sat_id), hyper_for_round(round));
}

// ---------------------------------------------------------------------------
// FedHAP

void FedHapEngine::start(double t0_s) {
    m_ring = m_geometry.server_ids(); // already sorted ascending
    m_last_progress_t = t0_s;
    arm_watchdog(t0_s);
    m_sim.schedule(t0_s, sim::EventKind::WindowOpen,
                   [this]() { start_round(m_sim.now_s()); });
}

void FedHapEngine::start_round(double t) {
    ++m_round_tag;
    m_wave_sealed = false;
    m_reverse_active = false;
    m_awaiting_retry = false;
    m_outstanding = 0;
    m_has_global.clear();
    m_inflight_global.clear();
    m_waiting_for_global.clear();
    m_training_inflight.clear();
    m_training_waiters.clear();
    m_active_chain_keys.clear();
    m_chains.clear();
    m_trained.clear();
    m_uploads.clear();
    m_collected = {};
    m_coverage_at_last_retry = -1;
    // The ring head already holds the current global model.
    on_server_received_global(m_ring.front(), t);
}

void FedHapEngine::on_server_received_global(int server, double t) {
    m_has_global.insert(server);
    const auto pos = static_cast<std::size_t>(
        std::find(m_ring.begin(), m_ring.end(), server) - m_ring.begin());
    if (pos + 1 < m_ring.size()) {
        const int next = m_ring[pos + 1];
        const int tag = m_round_tag;
        m_net.transmit(server, next, payload_bits(1), t, m_rounds,
                       [this, next, tag](double tc) {
                           if (tag != m_round_tag) return;
                           on_server_received_global(next, tc);
                       });
    } else {
        m_wave_sealed = true;
    }
    broadcast_to_visible(server, t);
    std::set<int> all_orbits;
    for (const auto& [orbit, roster] : m_orbit_rosters) all_orbits.insert(orbit);
    launch_chains(server, t, all_orbits, {});
    maybe_collect(t);
}

void FedHapEngine::broadcast_to_visible(int server, double t) {
    for (int sat : m_geometry.satellite_ids()) {
        if (m_has_global.count(sat) || m_inflight_global.count(sat)) continue;
        if (!m_plan.window_at(server, sat, t)) continue;
        deliver_global(server, sat, t);
    }
}

void FedHapEngine::deliver_global(int server, int sat, double t) {
    m_inflight_global.insert(sat);
    const int tag = m_round_tag;
    m_net.transmit(server, sat, payload_bits(1), t, m_rounds,
                   [this, sat, tag](double tc) {
                       if (tag != m_round_tag) return;
                       m_inflight_global.erase(sat);
                       m_has_global.insert(sat);
                       auto it = m_waiting_for_global.find(sat);
                       if (it == m_waiting_for_global.end()) return;
                       auto chains = std::move(it->second);
                       m_waiting_for_global.erase(it);
                       for (Chain* c : chains) begin_holding(c, sat, tc);
                   });
}

std::optional<int> FedHapEngine::choose_entry(int orbit, int server, double t,
                                              const std::set<int>& prefer) const {
    auto it = m_orbit_rosters.find(orbit);
    if (it == m_orbit_rosters.end()) return std::nullopt;
    std::optional<int> best;
    double best_remaining = -1.0;
    bool best_preferred = false;
    for (int sat : it->second) {
        auto w = m_plan.window_at(server, sat, t);
        if (!w) continue;
        const double remaining = w->end_s - t;
        const bool preferred = prefer.count(sat) > 0;
        // Preferred candidates beat non-preferred ones outright; within a
        // class the longest remaining window wins, ties to the lowest id.
        if (best && preferred == best_preferred && remaining <= best_remaining)
            continue;
        if (best && best_preferred && !preferred) continue;
        best = sat;
        best_remaining = remaining;
        best_preferred = preferred;
    }
    return best;
}

std::optional<int> FedHapEngine::choose_server(int sat, double t) const {
    std::optional<int> best;
    double best_remaining = -1.0;
    for (int server : m_geometry.server_ids()) {
        auto w = m_plan.window_at(server, sat, t);
        if (!w) continue;
        const double remaining = w->end_s - t;
        if (!best || remaining > best_remaining) {
            best = server;
            best_remaining = remaining;
        }
    }
    return best;
}

void FedHapEngine::launch_chains(int server, double t, const std::set<int>& orbits,
                                 const std::set<int>& prefer) {
    for (int orbit : orbits) {
        if (m_active_chain_keys.count({orbit, server})) continue;
        auto entry = choose_entry(orbit, server, t, prefer);
        if (!entry) continue;
        m_chains.push_back(std::make_unique<Chain>());
        Chain* chain = m_chains.back().get();
        chain->orbit = orbit;
        chain->home_server = server;
        m_active_chain_keys.insert({orbit, server});
        ++m_outstanding;
        if (m_has_global.count(*entry)) {
            begin_holding(chain, *entry, t);
        } else {
            // The chain rides on the model delivery; reuse an in-flight
            // broadcast transfer when one is already heading there.
            m_waiting_for_global[*entry].push_back(chain);
            if (!m_inflight_global.count(*entry)) deliver_global(server, *entry, t);
        }
    }
}

void FedHapEngine::begin_holding(Chain* chain, int sat, double t) {
    chain->current = sat;
    if (m_trained.count(sat)) {
        fold_and_route(chain, sat, t);
        return;
    }
    if (m_training_inflight.count(sat)) {
        m_training_waiters[sat].push_back(chain);
        return;
    }
    m_training_inflight.insert(sat);
    const int tag = m_round_tag;
    m_sim.schedule(t + m_settings.compute_delay_s,
                   sim::EventKind::TrainingComplete, [this, chain, sat, tag]() {
                       if (tag != m_round_tag) return;
                       const double now = m_sim.now_s();
                       m_trained.emplace(sat, train_local(sat, m_global, m_rounds));
                       m_training_inflight.erase(sat);
                       m_trace.record(now, "training", sat, sat, 0, m_rounds);
                       fold_and_route(chain, sat, now);
                       auto it = m_training_waiters.find(sat);
                       if (it == m_training_waiters.end()) return;
                       auto waiters = std::move(it->second);
                       m_training_waiters.erase(it);
                       for (Chain* w : waiters) fold_and_route(w, sat, now);
                   });
}

void FedHapEngine::fold_and_route(Chain* chain, int sat, double t) {
    if (chain->done) return;
    const nn::ModelVector& update = m_trained.at(sat);
    if (!chain->has_partial) {
        chain->partial.model = update;
        chain->partial.covered_sat_ids = {sat};
        chain->partial.covered_mass = mass_of(sat);
        chain->partial.orbit_index = chain->orbit;
        chain->has_partial = true;
    } else {
        chain->partial =
            aggregate::partial_aggregate(chain->partial, update, sat, mass_of(sat),
                                         m_orbit_masses.at(chain->orbit));
    }
    const int ring_size =
        static_cast<int>(m_orbit_rosters.at(chain->orbit).size());
    const int covered = static_cast<int>(chain->partial.covered_sat_ids.size());
    // The entry alone is not a deliverable partial unless the orbit has a
    // single satellite; after that, hand off to the best visible server.
    if (covered >= 2 || ring_size == 1) {
        if (auto server = choose_server(sat, t)) {
            const int tag = m_round_tag;
            auto delivered = std::make_shared<aggregate::PartialModel>(chain->partial);
            m_net.transmit(sat, *server, payload_bits(1), t, m_rounds,
                           [this, chain, server = *server, delivered, tag](double tc) {
                               if (tag != m_round_tag) return;
                               m_uploads[server].push_back(aggregate::ReceivedPartial{
                                   *delivered, tc, m_sim.ticket()});
                               complete_chain(chain, tc, false);
                           });
            return;
        }
    }
    if (covered < ring_size) {
        const int next = m_geometry.ring_neighbor(sat, m_settings.chain_step);
        if (!chain->partial.covers(next)) {
            const int tag = m_round_tag;
            // Forwarding ships the global model alongside the partial so the
            // next holder can train on it.
            m_net.transmit(sat, next, payload_bits(2), t, m_rounds,
                           [this, chain, next, tag](double tc) {
                               if (tag != m_round_tag) return;
                               begin_holding(chain, next, tc);
                           });
            return;
        }
    }
    // Walked the whole ring without meeting a server.
    complete_chain(chain, t, true);
}

void FedHapEngine::complete_chain(Chain* chain, double t, bool expired) {
    if (chain->done) return;
    chain->done = true;
    m_active_chain_keys.erase({chain->orbit, chain->home_server});
    --m_outstanding;
    m_last_progress_t = t;
    if (expired) {
        ++m_expired;
        m_trace.record(t, "expire", chain->current, -1, 0, m_rounds);
    }
    maybe_collect(t);
}

void FedHapEngine::maybe_collect(double t) {
    if (!m_wave_sealed || m_reverse_active || m_awaiting_retry ||
        m_outstanding > 0)
        return;
    m_reverse_active = true;
    if (m_ring.size() == 1) {
        for (auto& rp : m_uploads[m_ring.front()]) m_collected.add(std::move(rp));
        m_uploads.clear();
        finalize_wave(t);
        return;
    }
    auto carried = std::make_shared<std::vector<aggregate::ReceivedPartial>>(
        std::move(m_uploads[m_ring.back()]));
    m_uploads.erase(m_ring.back());
    reverse_hop(m_ring.size() - 1, carried, t);
}

void FedHapEngine::reverse_hop(
    std::size_t ring_pos,
    std::shared_ptr<std::vector<aggregate::ReceivedPartial>> carried, double t) {
    const int src = m_ring[ring_pos];
    const int dst = m_ring[ring_pos - 1];
    const std::int64_t bits = payload_bits(static_cast<int>(carried->size()));
    const int tag = m_round_tag;
    m_net.transmit(src, dst, bits, t, m_rounds,
                   [this, ring_pos, carried, dst, tag](double tc) {
                       if (tag != m_round_tag) return;
                       auto it = m_uploads.find(dst);
                       if (it != m_uploads.end()) {
                           for (auto& rp : it->second)
                               carried->push_back(std::move(rp));
                           m_uploads.erase(it);
                       }
                       if (ring_pos - 1 == 0) {
                           for (auto& rp : *carried) m_collected.add(std::move(rp));
                           finalize_wave(tc);
                       } else {
                           reverse_hop(ring_pos - 1, carried, tc);
                       }
                   });
}

void FedHapEngine::finalize_wave(double t) {
    m_reverse_active = false;
    const auto filtered =
        aggregate::organize_and_filter(m_collected, m_orbit_rosters);
    if (auto model = aggregate::global_aggregate(filtered, m_masses)) {
        m_global = std::move(*model);
        ++m_rounds;
        ++m_version;
        m_last_progress_t = t;
        m_trace.record(t, "aggregation", m_ring.front(), m_ring.front(), 0,
                       m_rounds);
        if (m_callbacks.on_model_updated) m_callbacks.on_model_updated(t);
        start_round(t);
        return;
    }
    ++m_reschedules;
    std::vector<int> missing_sats;
    int covered = 0;
    for (const auto& cov : filtered.coverage) {
        const auto& roster = m_orbit_rosters.at(cov.orbit_index);
        covered += static_cast<int>(roster.size() - cov.missing_sat_ids.size());
        missing_sats.insert(missing_sats.end(), cov.missing_sat_ids.begin(),
                            cov.missing_sat_ids.end());
    }
    m_trace.record(t, "reschedule", m_ring.front(), -1, 0, m_rounds);
    if (m_callbacks.on_reschedule)
        m_callbacks.on_reschedule(t, filtered.missing_orbits());
    m_awaiting_retry = true;
    const bool progressed = covered > m_coverage_at_last_retry;
    m_coverage_at_last_retry = covered;
    schedule_retry(t, missing_sats, progressed);
}

void FedHapEngine::schedule_retry(double t, const std::vector<int>& missing_sats,
                                  bool progressed) {
    // Next time an uncovered satellite is reachable from any server. A wave
    // that banked nothing new proved the current pass cannot make progress,
    // so in that case wait for a window that has not opened yet instead of
    // relaunching into the same sky.
    double t_star = std::numeric_limits<double>::infinity();
    for (int server : m_ring) {
        for (int sat : missing_sats) {
            for (const auto& w : m_plan.windows(server, sat)) {
                if (w.end_s < t) continue;
                if (!progressed && w.start_s <= t) continue;
                t_star = std::min(t_star, std::max(t, w.start_s));
                break; // windows are sorted; later ones only start later
            }
        }
    }
    if (!std::isfinite(t_star)) {
        // No further contact with the uncovered satellites before the
        // horizon; the round can never complete.
        m_trace.record(t, "diagnostic", -1, -1, 0, m_rounds);
        return;
    }
    const int tag = m_round_tag;
    m_sim.schedule(t_star, sim::EventKind::WindowOpen, [this, tag]() {
        if (tag != m_round_tag || !m_awaiting_retry) return;
        const double now = m_sim.now_s();
        // Recompute coverage: earlier retries may have filled some gaps.
        const auto filtered =
            aggregate::organize_and_filter(m_collected, m_orbit_rosters);
        std::set<int> orbits;
        std::set<int> prefer;
        for (const auto& cov : filtered.coverage) {
            if (cov.missing_sat_ids.empty()) continue;
            orbits.insert(cov.orbit_index);
            prefer.insert(cov.missing_sat_ids.begin(), cov.missing_sat_ids.end());
        }
        if (orbits.empty()) return;
        m_awaiting_retry = false;
        const int before = m_outstanding;
        for (int server : m_ring) launch_chains(server, now, orbits, prefer);
        if (m_outstanding == before) {
            // Nothing was launchable after all; wait for a fresh window.
            m_awaiting_retry = true;
            schedule_retry(now, std::vector<int>(prefer.begin(), prefer.end()),
                           false);
        }
    });
}

void FedHapEngine::arm_watchdog(double t) {
    const double next = t + m_settings.watchdog_timeout_s;
    if (next > m_sim.horizon_s()) return;
    m_sim.schedule(next, sim::EventKind::EvalCheckpoint, [this]() {
        const double now = m_sim.now_s();
        if (now - m_last_progress_t >= m_settings.watchdog_timeout_s - 1e-9) {
            m_trace.record(now, "diagnostic", -1, -1, 0, m_rounds);
        }
        arm_watchdog(now);
    });
}

// ---------------------------------------------------------------------------
// Synchronous star baseline

int StarSyncEngine::server_id() const { return m_geometry.server_ids().front(); }

void StarSyncEngine::start(double t0_s) {
    m_sim.schedule(t0_s, sim::EventKind::WindowOpen,
                   [this]() { start_round(m_sim.now_s()); });
}

void StarSyncEngine::start_round(double t) {
    ++m_round_tag;
    m_received.clear();
    const int ps = server_id();
    for (int sat : m_geometry.satellite_ids()) {
        const int tag = m_round_tag;
        m_net.transmit(ps, sat, payload_bits(1), t, m_rounds,
                       [this, sat, ps, tag](double tc) {
            if (tag != m_round_tag) return;
            m_sim.schedule(tc + m_settings.compute_delay_s,
                           sim::EventKind::TrainingComplete,
                           [this, sat, ps, tag]() {
                if (tag != m_round_tag) return;
                const double now = m_sim.now_s();
                auto update = std::make_shared<nn::ModelVector>(
                    train_local(sat, m_global, m_rounds));
                m_trace.record(now, "training", sat, sat, 0, m_rounds);
                m_net.transmit(sat, ps, payload_bits(1), now, m_rounds,
                               [this, sat, ps, update, tag](double tu) {
                    if (tag != m_round_tag) return;
                    m_received.emplace(sat, std::move(*update));
                    if (m_received.size() != m_geometry.satellite_ids().size())
                        return;
                    // Barrier reached: every satellite reported back.
                    std::vector<nn::ModelVector> models;
                    std::vector<std::int64_t> sizes;
                    models.reserve(m_received.size());
                    for (const auto& [id, model] : m_received) {
                        models.push_back(model);
                        sizes.push_back(mass_of(id));
                    }
                    m_global = aggregate::fedavg_aggregate(models, sizes);
                    ++m_rounds;
                    ++m_version;
                    m_trace.record(tu, "aggregation", ps, ps, 0, m_rounds);
                    if (m_callbacks.on_model_updated)
                        m_callbacks.on_model_updated(tu);
                    start_round(tu);
                });
            });
        });
    }
}

// ---------------------------------------------------------------------------
// Asynchronous baseline

int AsyncEngine::server_id() const { return m_geometry.server_ids().front(); }

void AsyncEngine::start(double t0_s) {
    m_sim.schedule(t0_s, sim::EventKind::WindowOpen, [this]() {
        const double now = m_sim.now_s();
        for (int sat : m_geometry.satellite_ids()) dispatch(sat, now);
    });
}

void AsyncEngine::dispatch(int sat, double t) {
    const int ps = server_id();
    m_net.transmit(ps, sat, payload_bits(1), t, m_blends,
                   [this, sat, ps](double tc) {
        // The satellite trains on the model as delivered; staleness counts
        // the blends the server applies between now and the upload.
        auto snapshot = std::make_shared<nn::ModelVector>(m_global);
        const std::int64_t version_at_delivery = m_version;
        m_sim.schedule(tc + m_settings.compute_delay_s,
                       sim::EventKind::TrainingComplete,
                       [this, sat, ps, snapshot, version_at_delivery]() {
            const double now = m_sim.now_s();
            auto update = std::make_shared<nn::ModelVector>(
                train_local(sat, *snapshot, m_blends));
            m_trace.record(now, "training", sat, sat, 0, m_blends);
            m_net.transmit(sat, ps, payload_bits(1), now, m_blends,
                           [this, sat, ps, update, version_at_delivery](double tu) {
                const int staleness =
                    static_cast<int>(m_version - version_at_delivery);
                m_global = aggregate::async_blend(m_global, *update,
                                                  m_settings.async_eta0,
                                                  staleness);
                ++m_version;
                ++m_blends;
                m_rounds = m_blends;
                m_trace.record(tu, "aggregation", ps, ps, 0, m_blends);
                if (m_callbacks.on_model_updated) m_callbacks.on_model_updated(tu);
                dispatch(sat, tu);
            });
        });
    });
}

} // namespace leofl::protocol

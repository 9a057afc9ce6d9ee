#pragma once

#include "leofl/aggregate.hpp"
#include "leofl/data.hpp"
#include "leofl/network.hpp"
#include "leofl/nn.hpp"
#include "leofl/simengine.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

namespace leofl::protocol {

struct ProtocolSettings {
    // Wall-clock cost of one local training pass on a satellite.
    double compute_delay_s = 60.0;
    // Ring-walk direction of aggregation chains: -1 steps against the
    // in-orbit index (into the part of the ring the server has not seen
    // yet), +1 steps along it.
    int chain_step = -1;
    // Idle period after which the engine emits a stall diagnostic.
    double watchdog_timeout_s = 21'600.0;
    int bits_per_param = 32;
    int metadata_overhead_bits = 1024;
    // Base mixing weight for the asynchronous baseline.
    double async_eta0 = 0.5;
};

struct EngineCallbacks {
    // Fired whenever the global model changes (round completion or blend).
    std::function<void(double t)> on_model_updated;
    // Fired when a collection wave ends with orbits still uncovered.
    std::function<void(double t, const std::vector<int>& missing_orbits)>
        on_reschedule;
};

// Shared plumbing: node rosters, data masses, payload sizing, per-round
// training seeds.
class EngineBase {
public:
    EngineBase(sim::Simulator& simulator, net::NetworkModel& network,
               const orbital::Geometry& geometry, const net::ContactPlan& plan,
               nn::MlpArchitecture architecture,
               const std::vector<data::DataShard>& shards,
               nn::HyperParams hyper, ProtocolSettings settings,
               nn::ModelVector initial_model, sim::TraceSink& trace,
               EngineCallbacks callbacks);
    virtual ~EngineBase() = default;

    virtual void start(double t0_s) = 0;

    const nn::ModelVector& global_model() const { return m_global; }
    int rounds_completed() const { return m_rounds; }
    // Bumps on every global-model change; evaluation caches key on it.
    std::int64_t model_version() const { return m_version; }

protected:
    const data::DataShard& shard_of(int sat_id) const;
    std::int64_t mass_of(int sat_id) const;
    std::int64_t payload_bits(int model_count) const;
    // Seed stream for round r so every (round, satellite) pair shuffles its
    // batches independently but reproducibly.
    nn::HyperParams hyper_for_round(int round) const;
    nn::ModelVector train_local(int sat_id, const nn::ModelVector& base,
                                int round) const;

    sim::Simulator& m_sim;
    net::NetworkModel& m_net;
    const orbital::Geometry& m_geometry;
    const net::ContactPlan& m_plan;
    nn::MlpArchitecture m_arch;
    nn::HyperParams m_hyper;
    ProtocolSettings m_settings;
    sim::TraceSink& m_trace;
    EngineCallbacks m_callbacks;

    nn::ModelVector m_global;
    int m_rounds = 0;
    std::int64_t m_version = 0;

    std::map<int, const data::DataShard*> m_shards;     // by satellite id
    std::map<int, std::int64_t> m_masses;               // n_k by satellite id
    std::map<int, std::int64_t> m_orbit_masses;         // sum n_k per orbit
    std::map<int, std::vector<int>> m_orbit_rosters;    // satellite ids per orbit
};

// Round structure, with H parameter servers (HAPs and/or ground stations)
// forming a logical ring sorted by node id:
//
//  1. Dissemination. The lowest-id server starts with the current global
//     model, pushes it along the server ring hop by hop, and every server
//     broadcasts it down to the satellites it currently sees.
//  2. Chains. On receiving the global model, each server starts at most one
//     aggregation chain per orbit: the visible satellite with the longest
//     remaining window becomes the entry, trains, folds its model into the
//     carried partial and either hands the (global + partial) pair to the
//     next ring neighbour or, once the partial covers at least two
//     satellites, uploads it to the best visible server. A chain that can
//     neither forward nor upload expires; whatever it covered is lost.
//  3. Collection. When every chain has finished, partials flow back along
//     the server ring to the ring head, which de-duplicates them
//     (first-arrival keeps a satellite), and aggregates mass-weighted once
//     every orbit is fully covered.
//  4. Reschedule. If coverage is incomplete the kept partials are retained
//     and fresh chains are launched for the uncovered orbits at the next
//     contact opportunity; the round completes only after full coverage.
//
// Satellites train once per round; revisits within a round reuse the cached
// update.
class FedHapEngine : public EngineBase {
public:
    using EngineBase::EngineBase;

    void start(double t0_s) override;
    int reschedule_count() const { return m_reschedules; }
    int expired_chains() const { return m_expired; }

    // Chain entry rule, exposed for validation: visible satellite of the
    // orbit with the longest remaining window, preferring ids in `prefer`
    // when given; ties break to the lowest id.
    std::optional<int> choose_entry(int orbit, int server, double t,
                                    const std::set<int>& prefer = {}) const;
    // Upload target rule: visible server with the longest remaining window,
    // ties to the lowest id.
    std::optional<int> choose_server(int sat, double t) const;

private:
    struct Chain {
        int orbit = 0;
        int home_server = 0; // server that launched it
        int current = -1;
        aggregate::PartialModel partial;
        bool has_partial = false;
        bool done = false;
    };

    void start_round(double t);
    void on_server_received_global(int server, double t);
    void broadcast_to_visible(int server, double t);
    void deliver_global(int server, int sat, double t);
    void launch_chains(int server, double t, const std::set<int>& orbits,
                       const std::set<int>& prefer);
    void begin_holding(Chain* chain, int sat, double t);
    void fold_and_route(Chain* chain, int sat, double t);
    void complete_chain(Chain* chain, double t, bool expired);
    void maybe_collect(double t);
    void reverse_hop(std::size_t ring_pos,
                     std::shared_ptr<std::vector<aggregate::ReceivedPartial>> carried,
                     double t);
    void finalize_wave(double t);
    void schedule_retry(double t, const std::vector<int>& missing_sats,
                        bool progressed);
    void arm_watchdog(double t);

    std::vector<int> m_ring; // sorted server ids; front = round head
    int m_round_tag = 0;     // guards callbacks that outlive their round

    // Per-round state.
    bool m_wave_sealed = false;
    bool m_reverse_active = false;
    bool m_awaiting_retry = false;
    int m_outstanding = 0;
    std::set<int> m_has_global;
    std::set<int> m_inflight_global;
    std::map<int, std::vector<Chain*>> m_waiting_for_global;
    std::set<std::pair<int, int>> m_active_chain_keys; // (orbit, server)
    std::vector<std::unique_ptr<Chain>> m_chains;
    std::map<int, nn::ModelVector> m_trained; // per-round training cache
    std::set<int> m_training_inflight;
    std::map<int, std::vector<Chain*>> m_training_waiters;
    std::map<int, std::vector<aggregate::ReceivedPartial>> m_uploads; // per server
    aggregate::PartialCollection m_collected;

    int m_reschedules = 0;
    int m_expired = 0;
    int m_coverage_at_last_retry = -1; // unique sats banked when the previous
                                       // retry wave launched; gates backoff
    double m_last_progress_t = 0.0;
};

// Synchronous single-server baseline: the server sends the global model to
// every satellite over its contact windows, satellites train and upload at
// their next contact, and the round closes with a data-size-weighted mean
// once every update is back.
class StarSyncEngine : public EngineBase {
public:
    using EngineBase::EngineBase;

    void start(double t0_s) override;

private:
    void start_round(double t);
    int server_id() const;

    int m_round_tag = 0;
    std::map<int, nn::ModelVector> m_received;
};

// Asynchronous single-server baseline: each satellite loops independently
// (download, train, upload); the server folds every incoming update with a
// weight decayed by how many blends happened since that satellite's copy
// was current.
class AsyncEngine : public EngineBase {
public:
    using EngineBase::EngineBase;

    void start(double t0_s) override;
    int blends() const { return m_blends; }

private:
    void dispatch(int sat, double t);
    int server_id() const;

    int m_blends = 0;
};

} // namespace leofl::protocol

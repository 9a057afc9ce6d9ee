#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "leofl/nn.hpp"

namespace leofl::aggregate {

// Chain-accumulated convex combination of one orbit's local models.
struct PartialModel {
    nn::ModelVector model;
    std::vector<int> covered_sat_ids; // insertion order = chain order
    std::int64_t covered_mass = 0;    // sum of n_k over covered ids
    int orbit_index = 0;

    bool covers(int sat_id) const;
};

// Fold one more local model into the carried partial:
//   model <- (1-gamma) carried + gamma local, gamma = n_local / orbit_mass.
// The same satellite may not be folded twice into one partial.
PartialModel partial_aggregate(const PartialModel& carried,
                               const nn::ModelVector& local, int local_sat_id,
                               std::int64_t n_local, std::int64_t orbit_mass);

struct ReceivedPartial {
    PartialModel partial;
    double arrival_time_s = 0.0;
    std::uint64_t arrival_seq = 0; // total order for simultaneous arrivals
};

struct PartialCollection {
    std::map<int, std::vector<ReceivedPartial>> by_orbit;

    void add(ReceivedPartial rp);
    std::size_t total() const;
};

struct KeptPartial {
    PartialModel partial;
    // Satellites this partial is the first keeper for; their data mass is
    // what the partial weighs in the global aggregate.
    std::vector<int> unique_sat_ids;
};

struct OrbitCoverage {
    int orbit_index = 0;
    std::vector<int> missing_sat_ids; // absent from every kept partial
    std::vector<int> overlap_sat_ids; // appear in more than one kept partial
    int dropped_redundant = 0;
};

struct FilteredCollection {
    std::map<int, std::vector<KeptPartial>> by_orbit;
    std::vector<OrbitCoverage> coverage;

    bool complete() const;
    std::vector<int> missing_orbits() const;
};

// Per orbit, in arrival order: keep a partial iff it covers a satellite no
// kept partial covers yet; drop fully redundant ones; report ids missing
// from every kept partial. orbit_rosters lists every satellite id per orbit.
FilteredCollection organize_and_filter(
    const PartialCollection& raw,
    const std::map<int, std::vector<int>>& orbit_rosters);

// Weighted sum of kept partials, each weighted by its first-keeper data mass
// over the total constellation mass, so weights sum to exactly 1 under full
// coverage. Incomplete coverage returns nullopt: the caller must reschedule.
std::optional<nn::ModelVector> global_aggregate(
    const FilteredCollection& filtered,
    const std::map<int, std::int64_t>& sat_masses);

// Plain data-size-weighted mean of per-satellite models (synchronous
// parameter-server aggregation).
nn::ModelVector fedavg_aggregate(const std::vector<nn::ModelVector>& models,
                                 const std::vector<std::int64_t>& sizes);

// w <- (1-eta) w + eta w_k with eta = eta0 / (1 + staleness_rounds).
nn::ModelVector async_blend(const nn::ModelVector& global,
                            const nn::ModelVector& local, double eta0,
                            int staleness_rounds);

} // namespace leofl::aggregate

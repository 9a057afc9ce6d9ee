#include "leofl/aggregate.hpp"

#include <algorithm>
#include <set>

#include "leofl/errors.hpp"

namespace leofl::aggregate {

bool PartialModel::covers(int sat_id) const {
    return std::find(covered_sat_ids.begin(), covered_sat_ids.end(), sat_id) !=
           covered_sat_ids.end();
}

PartialModel partial_aggregate(const PartialModel& carried,
                               const nn::ModelVector& local, int local_sat_id,
                               std::int64_t n_local, std::int64_t orbit_mass) {
    if (carried.covered_sat_ids.empty())
        throw ProtocolError("partial_aggregate: carried partial covers nothing");
    if (n_local <= 0)
        throw ProtocolError("partial_aggregate: non-positive local data size");
    if (orbit_mass < n_local)
        throw ProtocolError("partial_aggregate: orbit mass below local size");
    if (carried.covers(local_sat_id))
        throw ProtocolError("partial_aggregate: satellite " +
                            std::to_string(local_sat_id) +
                            " already folded into this partial");
    if (carried.model.architecture_id != local.architecture_id)
        throw ProtocolError("partial_aggregate: architecture mismatch");
    if (carried.model.values.size() != local.values.size())
        throw ProtocolError("partial_aggregate: parameter length mismatch");

    const double gamma =
        static_cast<double>(n_local) / static_cast<double>(orbit_mass);
    PartialModel out = carried;
    out.model.values = (1.0 - gamma) * carried.model.values + gamma * local.values;
    out.covered_sat_ids.push_back(local_sat_id);
    out.covered_mass += n_local;
    return out;
}

void PartialCollection::add(ReceivedPartial rp) {
    by_orbit[rp.partial.orbit_index].push_back(std::move(rp));
}

std::size_t PartialCollection::total() const {
    std::size_t n = 0;
    for (const auto& [_, v] : by_orbit) n += v.size();
    return n;
}

bool FilteredCollection::complete() const {
    for (const auto& c : coverage)
        if (!c.missing_sat_ids.empty()) return false;
    return true;
}

std::vector<int> FilteredCollection::missing_orbits() const {
    std::vector<int> out;
    for (const auto& c : coverage)
        if (!c.missing_sat_ids.empty()) out.push_back(c.orbit_index);
    return out;
}

FilteredCollection organize_and_filter(
    const PartialCollection& raw,
    const std::map<int, std::vector<int>>& orbit_rosters) {
    FilteredCollection out;
    for (const auto& [orbit, roster] : orbit_rosters) {
        OrbitCoverage cov;
        cov.orbit_index = orbit;

        std::vector<ReceivedPartial> arrivals;
        if (auto it = raw.by_orbit.find(orbit); it != raw.by_orbit.end())
            arrivals = it->second;
        std::stable_sort(arrivals.begin(), arrivals.end(),
                         [](const ReceivedPartial& a, const ReceivedPartial& b) {
                             if (a.arrival_time_s != b.arrival_time_s)
                                 return a.arrival_time_s < b.arrival_time_s;
                             return a.arrival_seq < b.arrival_seq;
                         });

        std::set<int> first_kept; // ids already owned by an earlier keeper
        std::set<int> overlaps;
        auto& kept = out.by_orbit[orbit];
        for (const auto& rp : arrivals) {
            KeptPartial kp;
            kp.partial = rp.partial;
            for (int id : rp.partial.covered_sat_ids) {
                if (first_kept.count(id))
                    overlaps.insert(id);
                else
                    kp.unique_sat_ids.push_back(id);
            }
            if (kp.unique_sat_ids.empty()) {
                ++cov.dropped_redundant;
                continue;
            }
            for (int id : kp.unique_sat_ids) first_kept.insert(id);
            kept.push_back(std::move(kp));
        }

        for (int id : roster)
            if (!first_kept.count(id)) cov.missing_sat_ids.push_back(id);
        cov.overlap_sat_ids.assign(overlaps.begin(), overlaps.end());
        out.coverage.push_back(std::move(cov));
        if (kept.empty()) out.by_orbit.erase(orbit);
    }
    return out;
}

std::optional<nn::ModelVector> global_aggregate(
    const FilteredCollection& filtered,
    const std::map<int, std::int64_t>& sat_masses) {
    if (!filtered.complete()) return std::nullopt;

    double total_mass = 0.0;
    for (const auto& [_, m] : sat_masses) total_mass += static_cast<double>(m);
    if (!(total_mass > 0.0))
        throw ProtocolError("global_aggregate: zero total data mass");

    std::optional<nn::ModelVector> out;
    for (const auto& [_, kept] : filtered.by_orbit) {
        for (const auto& kp : kept) {
            double mass = 0.0;
            for (int id : kp.unique_sat_ids) {
                auto it = sat_masses.find(id);
                if (it == sat_masses.end())
                    throw ProtocolError("global_aggregate: no data mass for satellite " +
                                        std::to_string(id));
                mass += static_cast<double>(it->second);
            }
            const double w = mass / total_mass;
            if (!out) {
                out = kp.partial.model;
                out->values = w * kp.partial.model.values;
            } else {
                if (out->architecture_id != kp.partial.model.architecture_id)
                    throw ProtocolError("global_aggregate: architecture mismatch");
                out->values += w * kp.partial.model.values;
            }
        }
    }
    if (!out) throw ProtocolError("global_aggregate: empty collection");
    if (!out->values.allFinite())
        throw NumericalError("global_aggregate: non-finite output");
    return out;
}

nn::ModelVector fedavg_aggregate(const std::vector<nn::ModelVector>& models,
                                 const std::vector<std::int64_t>& sizes) {
    if (models.empty() || models.size() != sizes.size())
        throw ProtocolError("fedavg_aggregate: model/size count mismatch");
    double n = 0.0;
    for (std::int64_t s : sizes) {
        if (s <= 0) throw ProtocolError("fedavg_aggregate: non-positive size");
        n += static_cast<double>(s);
    }
    nn::ModelVector out = models.front();
    out.values = (sizes.front() / n) * models.front().values;
    for (size_t i = 1; i < models.size(); ++i) {
        if (models[i].architecture_id != out.architecture_id)
            throw ProtocolError("fedavg_aggregate: architecture mismatch");
        out.values += (sizes[i] / n) * models[i].values;
    }
    return out;
}

nn::ModelVector async_blend(const nn::ModelVector& global,
                            const nn::ModelVector& local, double eta0,
                            int staleness_rounds) {
    if (eta0 < 0.0 || eta0 > 1.0)
        throw ConfigError("async_blend: eta0 outside [0,1]");
    if (staleness_rounds < 0)
        throw ProtocolError("async_blend: negative staleness");
    if (global.architecture_id != local.architecture_id)
        throw ProtocolError("async_blend: architecture mismatch");
    const double eta = eta0 / (1.0 + staleness_rounds);
    nn::ModelVector out = global;
    out.values = (1.0 - eta) * global.values + eta * local.values;
    return out;
}

} // namespace leofl::aggregate

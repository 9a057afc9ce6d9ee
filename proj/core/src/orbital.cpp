#include "leofl/orbital.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "leofl/errors.hpp"

namespace leofl::orbital {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

int ConstellationSpec::total_satellites() const {
    int n = 0;
    for (const auto& o : orbits) n += o.num_satellites;
    return n;
}

double orbital_period_s(double altitude_m, const PhysicalConstants& pc) {
    if (!(altitude_m > 0.0))
        throw std::domain_error("orbital_period_s: altitude must be positive");
    const double a = pc.earth_radius_m + altitude_m;
    return kTwoPi * std::pow(a, 1.5) / std::sqrt(pc.mu());
}

double orbital_speed_m_s(double altitude_m, const PhysicalConstants& pc) {
    if (!(altitude_m > 0.0))
        throw std::domain_error("orbital_speed_m_s: altitude must be positive");
    const double a = pc.earth_radius_m + altitude_m;
    return kTwoPi * a / orbital_period_s(altitude_m, pc);
}

ConstellationSpec make_walker_delta(int num_orbits, int sats_per_orbit,
                                    double altitude_m, double inclination_rad,
                                    double raan_spread_rad,
                                    double interplane_phase_rad) {
    if (num_orbits < 1 || sats_per_orbit < 1)
        throw ConfigError("make_walker_delta: need at least one orbit and one satellite per orbit");
    if (sats_per_orbit >= kSatIdStride)
        throw ConfigError("make_walker_delta: satellites per orbit exceed id stride");
    ConstellationSpec spec;
    spec.orbits.reserve(static_cast<size_t>(num_orbits));
    for (int l = 0; l < num_orbits; ++l) {
        OrbitSpec o;
        o.orbit_index = l;
        o.altitude_m = altitude_m;
        o.inclination_rad = inclination_rad;
        o.raan_rad = raan_spread_rad * l / num_orbits;
        o.num_satellites = sats_per_orbit;
        o.phase_offset_rad = interplane_phase_rad * l;
        spec.orbits.push_back(o);
    }
    return spec;
}

double elevation_rad(const Eigen::Vector3d& observer,
                     const Eigen::Vector3d& target) {
    const Eigen::Vector3d d = target - observer;
    const double dn = d.norm();
    const double on = observer.norm();
    if (dn == 0.0 || on == 0.0)
        throw std::domain_error("elevation_rad: coincident or degenerate positions");
    double c = observer.dot(d) / (on * dn);
    c = std::clamp(c, -1.0, 1.0);
    return std::numbers::pi / 2.0 - std::acos(c);
}

bool line_of_sight_clear(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                         const PhysicalConstants& pc, double margin_m) {
    const Eigen::Vector3d ab = b - a;
    const double len2 = ab.squaredNorm();
    if (len2 == 0.0) return true;
    const double tstar = -a.dot(ab) / len2;
    if (tstar <= 0.0 || tstar >= 1.0) return true; // closest approach off-segment
    const double dmin = (a + tstar * ab).norm();
    return dmin > pc.earth_radius_m + margin_m;
}

Geometry::Geometry(ConstellationSpec constellation,
                   std::vector<GroundNodeSpec> ground_nodes,
                   PhysicalConstants constants, double los_margin_m)
    : m_constellation(std::move(constellation)),
      m_ground(std::move(ground_nodes)),
      m_constants(constants),
      m_los_margin_m(los_margin_m) {
    for (size_t i = 0; i < m_constellation.orbits.size(); ++i) {
        const auto& o = m_constellation.orbits[i];
        if (o.orbit_index != static_cast<int>(i))
            throw ConfigError("Geometry: orbit_index must match position in list");
        if (o.num_satellites < 1 || o.num_satellites >= kSatIdStride)
            throw ConfigError("Geometry: orbit satellite count out of range");
        if (!(o.altitude_m > 0.0))
            throw ConfigError("Geometry: orbit altitude must be positive");
        if (o.inclination_rad < 0.0 || o.inclination_rad > std::numbers::pi)
            throw ConfigError("Geometry: inclination outside [0, pi]");
        for (int s = 0; s < o.num_satellites; ++s)
            m_sat_ids.push_back(make_sat_id(o.orbit_index, s));
    }
    for (const auto& g : m_ground) {
        if (g.kind == NodeKind::Satellite)
            throw ConfigError("Geometry: ground node declared with satellite kind");
        if (g.altitude_m < 0.0)
            throw ConfigError("Geometry: ground node altitude must be >= 0");
        if (std::find(m_sat_ids.begin(), m_sat_ids.end(), g.node_id) != m_sat_ids.end())
            throw ConfigError("Geometry: ground node id collides with a satellite id");
        m_server_ids.push_back(g.node_id);
    }
    std::sort(m_server_ids.begin(), m_server_ids.end());
    if (std::adjacent_find(m_server_ids.begin(), m_server_ids.end()) != m_server_ids.end())
        throw ConfigError("Geometry: duplicate ground node id");
}

bool Geometry::has_node(int node_id) const {
    if (std::binary_search(m_server_ids.begin(), m_server_ids.end(), node_id))
        return true;
    const int orbit = node_id / kSatIdStride;
    const int slot = node_id % kSatIdStride;
    return node_id >= 0 && orbit < static_cast<int>(m_constellation.orbits.size()) &&
           slot < m_constellation.orbits[static_cast<size_t>(orbit)].num_satellites;
}

bool Geometry::is_satellite(int node_id) const {
    return has_node(node_id) &&
           !std::binary_search(m_server_ids.begin(), m_server_ids.end(), node_id);
}

NodeKind Geometry::kind(int node_id) const {
    if (is_satellite(node_id)) return NodeKind::Satellite;
    return ground(node_id).kind;
}

const GroundNodeSpec& Geometry::ground(int node_id) const {
    for (const auto& g : m_ground)
        if (g.node_id == node_id) return g;
    throw ProtocolError("Geometry: unknown ground node id " + std::to_string(node_id));
}

const OrbitSpec& Geometry::orbit_spec(int sat_id) const {
    if (!is_satellite(sat_id))
        throw ProtocolError("Geometry: unknown satellite id " + std::to_string(sat_id));
    return m_constellation.orbits[static_cast<size_t>(sat_id / kSatIdStride)];
}

int Geometry::orbit_of(int sat_id) const {
    return orbit_spec(sat_id).orbit_index;
}

int Geometry::slot_of(int sat_id) const {
    orbit_spec(sat_id); // validates
    return sat_id % kSatIdStride;
}

double Geometry::altitude_m(int node_id) const {
    if (is_satellite(node_id)) return orbit_spec(node_id).altitude_m;
    return ground(node_id).altitude_m;
}

int Geometry::ring_neighbor(int sat_id, int step) const {
    const auto& o = orbit_spec(sat_id);
    const int k = o.num_satellites;
    const int slot = ((sat_id % kSatIdStride) + step % k + k) % k;
    return make_sat_id(o.orbit_index, slot);
}

Eigen::Vector3d Geometry::position(int node_id, double t_s) const {
    if (is_satellite(node_id)) {
        const auto& o = orbit_spec(node_id);
        const int slot = node_id % kSatIdStride;
        const double r = m_constants.earth_radius_m + o.altitude_m;
        const double n = kTwoPi / orbital_period_s(o.altitude_m, m_constants);
        const double theta =
            o.phase_offset_rad + kTwoPi * slot / o.num_satellites + n * t_s;
        // In-plane position rotated by inclination about x, then RAAN about z.
        const double x = r * std::cos(theta);
        const double y = r * std::sin(theta);
        const double ci = std::cos(o.inclination_rad), si = std::sin(o.inclination_rad);
        const double co = std::cos(o.raan_rad), so = std::sin(o.raan_rad);
        return {co * x - so * (y * ci), so * x + co * (y * ci), y * si};
    }
    const auto& g = ground(node_id);
    const double r = m_constants.earth_radius_m + g.altitude_m;
    const double lon = g.longitude_rad + m_constants.earth_rotation_rate_rad_s * t_s;
    const double cl = std::cos(g.latitude_rad);
    return {r * cl * std::cos(lon), r * cl * std::sin(lon), r * std::sin(g.latitude_rad)};
}

double Geometry::distance_m(int a, int b, double t_s) const {
    return (position(a, t_s) - position(b, t_s)).norm();
}

double Geometry::elevation_from_rad(int observer_id, int target_id, double t_s) const {
    return elevation_rad(position(observer_id, t_s), position(target_id, t_s));
}

bool Geometry::is_visible(int a, int b, double t_s) const {
    if (a == b) return false;
    const bool sa = is_satellite(a), sb = is_satellite(b);
    if (!sa && !sb) return true; // server tier
    const Eigen::Vector3d pa = position(a, t_s), pb = position(b, t_s);
    if (sa && sb) {
        if (orbit_of(a) != orbit_of(b)) return false;
        const int k = orbit_spec(a).num_satellites;
        if (k > 1) {
            const int d = ((slot_of(a) - slot_of(b)) % k + k) % k;
            if (d != 1 && d != k - 1) return false;
        }
        return line_of_sight_clear(pa, pb, m_constants, m_los_margin_m);
    }
    // Ground-side node is the observer for the elevation mask.
    const int ground_id = sa ? b : a;
    const Eigen::Vector3d& pg = sa ? pb : pa;
    const Eigen::Vector3d& ps = sa ? pa : pb;
    if (elevation_rad(pg, ps) < ground(ground_id).min_elevation_rad) return false;
    return line_of_sight_clear(pa, pb, m_constants, m_los_margin_m);
}

std::vector<ContactWindow> compute_contact_windows(const Geometry& geometry,
                                                   int a, int b, double t0_s,
                                                   double t1_s, double step_s,
                                                   double refine_s) {
    if (!(t1_s >= t0_s))
        throw std::domain_error("compute_contact_windows: t1 < t0");
    if (!(step_s > 0.0) || !(refine_s > 0.0))
        throw std::domain_error("compute_contact_windows: non-positive step");

    // Bisect a visibility flip bracketed by [lo, hi] down to refine_s and
    // return the boundary time on the visible side.
    const auto refine = [&](double lo, double hi, bool vis_hi) {
        while (hi - lo > refine_s) {
            const double mid = 0.5 * (lo + hi);
            if (geometry.is_visible(a, b, mid) == vis_hi)
                hi = mid;
            else
                lo = mid;
        }
        return vis_hi ? hi : lo;
    };

    std::vector<ContactWindow> out;
    double t_prev = t0_s;
    bool vis_prev = geometry.is_visible(a, b, t0_s);
    double open_at = vis_prev ? t0_s : 0.0;

    double t = t0_s;
    while (t < t1_s) {
        t = std::min(t + step_s, t1_s);
        const bool vis = geometry.is_visible(a, b, t);
        if (vis != vis_prev) {
            if (vis)
                open_at = refine(t_prev, t, true);
            else
                out.push_back({a, b, open_at, refine(t_prev, t, false)});
            vis_prev = vis;
        }
        t_prev = t;
    }
    if (vis_prev) out.push_back({a, b, open_at, t1_s});
    return out;
}

} // namespace leofl::orbital

#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

namespace leofl::orbital {

struct PhysicalConstants {
    double earth_radius_m = 6'371'000.0;
    double gravitational_constant = 6.6743e-11; // m^3 kg^-1 s^-2
    // Chosen so that mu() equals the conventional geocentric constant
    // 3.986004418e14 m^3/s^2 under the default G above.
    double earth_mass_kg = 3.986004418e14 / 6.6743e-11;
    double speed_of_light_m_s = 299'792'458.0;
    double boltzmann_j_per_k = 1.380649e-23;
    double earth_rotation_rate_rad_s = 7.2921159e-5; // sidereal

    double mu() const { return gravitational_constant * earth_mass_kg; }
};

// Circular-orbit period 2*pi*(R+h)^(3/2)/sqrt(G*M). Throws std::domain_error
// for altitude <= 0.
double orbital_period_s(double altitude_m, const PhysicalConstants& pc);

// Circular-orbit speed 2*pi*(R+h)/T.
double orbital_speed_m_s(double altitude_m, const PhysicalConstants& pc);

// One circular orbital plane holding equally spaced satellites.
struct OrbitSpec {
    int orbit_index = 0;
    double altitude_m = 2'000'000.0;
    double inclination_rad = 0.0;   // [0, pi]
    double raan_rad = 0.0;          // right ascension of ascending node
    int num_satellites = 1;
    double phase_offset_rad = 0.0;  // in-plane anomaly of slot 0 at t = 0
};

struct ConstellationSpec {
    std::vector<OrbitSpec> orbits;

    int total_satellites() const;
};

// Walker-delta style constellation: planes share altitude and inclination,
// RAAN spread equally over raan_spread_rad, slot 0 of plane l phased by
// l * interplane_phase_rad.
ConstellationSpec make_walker_delta(int num_orbits, int sats_per_orbit,
                                    double altitude_m, double inclination_rad,
                                    double raan_spread_rad,
                                    double interplane_phase_rad);

enum class NodeKind { Satellite, Hap, Gs };

// A parameter-server node fixed to the rotating Earth (ground station at
// altitude ~0, or high-altitude platform at ~20 km).
struct GroundNodeSpec {
    int node_id = 0;
    NodeKind kind = NodeKind::Gs; // Hap or Gs
    double latitude_rad = 0.0;
    double longitude_rad = 0.0;
    double altitude_m = 0.0;
    double min_elevation_rad = 0.0; // mask applied on this node's side
};

// Satellite node ids encode (orbit_index, in_orbit_index).
inline constexpr int kSatIdStride = 1000;
inline int make_sat_id(int orbit_index, int in_orbit_index) {
    return orbit_index * kSatIdStride + in_orbit_index;
}

// Elevation of `target` above the local horizontal plane of `observer`:
// pi/2 minus the angle between r_observer and (r_target - r_observer).
// Throws std::domain_error when the positions coincide.
double elevation_rad(const Eigen::Vector3d& observer,
                     const Eigen::Vector3d& target);

// True iff the segment a-b clears the sphere of radius earth_radius+margin,
// i.e. the closest approach of the segment to the Earth center either
// exceeds that radius or falls outside the segment.
bool line_of_sight_clear(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                         const PhysicalConstants& pc, double margin_m);

// Inertial-frame kinematics for a constellation plus ground/HAP nodes.
// Satellites fly circular Keplerian orbits; ground nodes rotate with the
// Earth at earth_rotation_rate_rad_s. All positions are exact closed forms,
// so queries at arbitrary t are bit-reproducible.
class Geometry {
public:
    Geometry(ConstellationSpec constellation,
             std::vector<GroundNodeSpec> ground_nodes,
             PhysicalConstants constants = {}, double los_margin_m = 0.0);

    const PhysicalConstants& constants() const { return m_constants; }
    const ConstellationSpec& constellation() const { return m_constellation; }
    const std::vector<GroundNodeSpec>& ground_nodes() const { return m_ground; }
    double los_margin_m() const { return m_los_margin_m; }

    const std::vector<int>& satellite_ids() const { return m_sat_ids; }
    const std::vector<int>& server_ids() const { return m_server_ids; }

    bool has_node(int node_id) const;
    bool is_satellite(int node_id) const;
    NodeKind kind(int node_id) const;

    int orbit_of(int sat_id) const;
    int slot_of(int sat_id) const;
    // Nominal altitude above the mean-radius sphere (orbit shell altitude for
    // satellites, site altitude for ground nodes).
    double altitude_m(int node_id) const;
    // Ring neighbor in the given direction (+1 ascending in-orbit index,
    // -1 descending), wrapping modulo the orbit size.
    int ring_neighbor(int sat_id, int step) const;

    Eigen::Vector3d position(int node_id, double t_s) const;
    double distance_m(int a, int b, double t_s) const;
    double elevation_from_rad(int observer_id, int target_id, double t_s) const;

    // Visibility rules:
    //  - server <-> server: always true (the server tier is logically meshed)
    //  - satellite <-> satellite: intra-orbit ring neighbors only, needs a
    //    clear line of sight
    //  - satellite <-> server: elevation at the server side must reach that
    //    node's mask and the line of sight must be clear
    bool is_visible(int a, int b, double t_s) const;

private:
    const GroundNodeSpec& ground(int node_id) const;
    const OrbitSpec& orbit_spec(int sat_id) const;

    ConstellationSpec m_constellation;
    std::vector<GroundNodeSpec> m_ground;
    PhysicalConstants m_constants;
    double m_los_margin_m = 0.0;
    std::vector<int> m_sat_ids;
    std::vector<int> m_server_ids;
};

struct ContactWindow {
    int a = 0;
    int b = 0;
    double start_s = 0.0;
    double end_s = 0.0;
};

// Sampled visibility intervals for a node pair over [t0, t1]: coarse sweep at
// step_s, each transition refined by bisection to refine_s. Windows come out
// sorted and disjoint; features shorter than step_s can be missed, which
// bounds the error of the plan at step_s.
std::vector<ContactWindow> compute_contact_windows(const Geometry& geometry,
                                                   int a, int b, double t0_s,
                                                   double t1_s,
                                                   double step_s = 10.0,
                                                   double refine_s = 0.1);

} // namespace leofl::orbital

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "leofl/orbital.hpp"

namespace leofl::links {

using orbital::PhysicalConstants;

inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
inline double dbi_to_linear(double dbi) { return std::pow(10.0, dbi / 10.0); }
inline double to_db(double linear) { return 10.0 * std::log10(linear); }

struct RfLinkParams {
    double tx_power_dbm = 40.0;
    double tx_gain_dbi = 6.98;
    double rx_gain_dbi = 6.98;
    double noise_temperature_k = 354.81;
    double bandwidth_hz = 1e6;
    double carrier_hz = 2.4e9;
};

struct FsoLinkParams {
    double tx_power_dbm = 10.0;
    double lambertian_order = 1.0;     // sigma
    double detector_area_m2 = 1e-4;    // A_0
    double viewing_angle_rad = 0.0;    // alpha_e
    double filter_transmission = 1.0;  // T_f
    double concentrator_gain = 1.0;    // g(theta)
    double incidence_angle_rad = 0.0;  // theta
    double responsivity = 0.5;         // rho
    double noise_variance = 1e-13;     // N, linear
    double aperture_radius_m = 0.05;   // r
    double divergence_angle_rad = 1e-3; // xi
    double wind_speed_m_s = 21.0;      // V
    double hv_constant = 1.7e-14;      // K, m^(-2/3)
    double carrier_hz = 2.4e9;
    double bandwidth_hz = 1e6;
};

struct TransmissionSpec {
    std::int64_t payload_samples = 0;  // |D|
    double bits_per_sample = 32.0;     // z
    double data_rate_bps = 16e6;       // R
    double proc_delay_sender_s = 0.0;  // t_a
    double proc_delay_receiver_s = 0.0; // t_b
};

// (4 pi d f / c)^2. Throws std::domain_error for d <= 0.
double free_space_path_loss(double distance_m, double carrier_hz,
                            const PhysicalConstants& pc);
double free_space_path_loss_db(double distance_m, double carrier_hz,
                               const PhysicalConstants& pc);

// P_t G_a G_b / (K_B T B L), all converted to linear.
double rf_snr(const RfLinkParams& p, double distance_m,
              const PhysicalConstants& pc);

// B log2(1 + SNR).
double shannon_rate_bps(double snr_linear, double bandwidth_hz);

// z|D|/R + d/c + t_a + t_b.
double link_delay_s(const TransmissionSpec& spec, double distance_m,
                    const PhysicalConstants& pc);

// Line-of-sight optical channel gain. A receiver facing away from the beam
// (|theta| >= pi/2) is out of the field of view: gain 0 with the flag set,
// not an error.
struct FsoGain {
    double gain = 0.0;
    bool outside_field_of_view = false;
};
FsoGain fso_channel_gain(const FsoLinkParams& p, double distance_m);

// (rho G P_t)^2 B / (N R).
double fso_snr(const FsoLinkParams& p, double gain, double data_rate_bps);

// 4 pi r^2 / (pi (xi d)^2).
double fso_geometric_loss(const FsoLinkParams& p, double distance_m);

// Hufnagel-Valley refractive-index structure profile M^2(z), z in meters,
// wind speed in m/s.
double hv_refractive_index(const FsoLinkParams& p, double altitude_m);

// sqrt(23.17 (2 pi f / c * 1e9)^(7/6) M^2(z) d^(11/6)), written out exactly
// as the budget model states it.
double fso_turbulence_loss(const FsoLinkParams& p, double distance_m,
                           double altitude_m, const PhysicalConstants& pc);

// Model payloads ship as 32-bit parameters plus a fixed metadata block for
// satellite-id bookkeeping.
std::int64_t model_payload_bits(std::int64_t parameter_count,
                                int bits_per_param = 32,
                                int metadata_overhead_bits = 1024);

// dB-domain budget breakdown for human inspection (CLI table).
struct BudgetLine {
    std::string label;
    double value = 0.0;
    std::string unit;
};
std::vector<BudgetLine> rf_budget_table(const RfLinkParams& p, double distance_m,
                                        const PhysicalConstants& pc);
std::vector<BudgetLine> fso_budget_table(const FsoLinkParams& p, double distance_m,
                                         double altitude_m, double data_rate_bps,
                                         const PhysicalConstants& pc);

} // namespace leofl::links

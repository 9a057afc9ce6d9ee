#include "leofl/links.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace leofl::links {

namespace {
constexpr double kPi = std::numbers::pi;

void require_positive(double v, const char* what) {
    if (!(v > 0.0)) throw std::domain_error(std::string(what) + " must be positive");
}
} // namespace

double free_space_path_loss(double distance_m, double carrier_hz,
                            const PhysicalConstants& pc) {
    require_positive(distance_m, "free_space_path_loss: distance");
    require_positive(carrier_hz, "free_space_path_loss: carrier");
    const double x = 4.0 * kPi * distance_m * carrier_hz / pc.speed_of_light_m_s;
    return x * x;
}

double free_space_path_loss_db(double distance_m, double carrier_hz,
                               const PhysicalConstants& pc) {
    require_positive(distance_m, "free_space_path_loss_db: distance");
    require_positive(carrier_hz, "free_space_path_loss_db: carrier");
    return 20.0 * std::log10(4.0 * kPi * distance_m * carrier_hz /
                             pc.speed_of_light_m_s);
}

double rf_snr(const RfLinkParams& p, double distance_m,
              const PhysicalConstants& pc) {
    require_positive(p.bandwidth_hz, "rf_snr: bandwidth");
    require_positive(p.noise_temperature_k, "rf_snr: noise temperature");
    const double loss = free_space_path_loss(distance_m, p.carrier_hz, pc);
    const double pt = dbm_to_watts(p.tx_power_dbm);
    const double ga = dbi_to_linear(p.tx_gain_dbi);
    const double gb = dbi_to_linear(p.rx_gain_dbi);
    return pt * ga * gb /
           (pc.boltzmann_j_per_k * p.noise_temperature_k * p.bandwidth_hz * loss);
}

double shannon_rate_bps(double snr_linear, double bandwidth_hz) {
    if (snr_linear < 0.0)
        throw std::domain_error("shannon_rate_bps: negative SNR");
    require_positive(bandwidth_hz, "shannon_rate_bps: bandwidth");
    return bandwidth_hz * std::log2(1.0 + snr_linear);
}

double link_delay_s(const TransmissionSpec& spec, double distance_m,
                    const PhysicalConstants& pc) {
    if (spec.payload_samples < 0)
        throw std::domain_error("link_delay_s: negative payload");
    require_positive(spec.bits_per_sample, "link_delay_s: bits per sample");
    require_positive(spec.data_rate_bps, "link_delay_s: data rate");
    if (distance_m < 0.0)
        throw std::domain_error("link_delay_s: negative distance");
    const double t_t =
        spec.bits_per_sample * static_cast<double>(spec.payload_samples) / spec.data_rate_bps;
    const double t_p = distance_m / pc.speed_of_light_m_s;
    return t_t + t_p + spec.proc_delay_sender_s + spec.proc_delay_receiver_s;
}

FsoGain fso_channel_gain(const FsoLinkParams& p, double distance_m) {
    require_positive(distance_m, "fso_channel_gain: distance");
    require_positive(p.detector_area_m2, "fso_channel_gain: detector area");
    if (std::abs(p.incidence_angle_rad) >= kPi / 2.0)
        return {0.0, true};
    const double g = (p.lambertian_order + 1.0) / (2.0 * kPi * distance_m * distance_m) *
                     p.detector_area_m2 *
                     std::pow(std::cos(p.viewing_angle_rad), p.lambertian_order) *
                     p.filter_transmission * p.concentrator_gain *
                     std::cos(p.incidence_angle_rad);
    return {g, false};
}

double fso_snr(const FsoLinkParams& p, double gain, double data_rate_bps) {
    if (gain < 0.0) throw std::domain_error("fso_snr: negative gain");
    require_positive(data_rate_bps, "fso_snr: data rate");
    require_positive(p.noise_variance, "fso_snr: noise variance");
    const double pt = dbm_to_watts(p.tx_power_dbm);
    const double s = p.responsivity * gain * pt;
    return s * s * p.bandwidth_hz / (p.noise_variance * data_rate_bps);
}

double fso_geometric_loss(const FsoLinkParams& p, double distance_m) {
    require_positive(distance_m, "fso_geometric_loss: distance");
    require_positive(p.divergence_angle_rad, "fso_geometric_loss: divergence");
    const double spread = p.divergence_angle_rad * distance_m;
    return 4.0 * kPi * p.aperture_radius_m * p.aperture_radius_m /
           (kPi * spread * spread);
}

double hv_refractive_index(const FsoLinkParams& p, double altitude_m) {
    if (altitude_m < 0.0)
        throw std::domain_error("hv_refractive_index: negative altitude");
    const double z = altitude_m;
    const double v = p.wind_speed_m_s;
    const double term1 = 0.00594 * std::pow(v / 27.0, 2.0) *
                         std::pow(1e-5 * z, 10.0) * std::exp(-z / 1000.0);
    const double term2 = 2.7e-16 * std::exp(-z / 1500.0);
    const double term3 = p.hv_constant * std::exp(-z / 100.0);
    return term1 + term2 + term3;
}

double fso_turbulence_loss(const FsoLinkParams& p, double distance_m,
                           double altitude_m, const PhysicalConstants& pc) {
    require_positive(distance_m, "fso_turbulence_loss: distance");
    const double m2 = hv_refractive_index(p, altitude_m);
    const double wavenumber_term =
        2.0 * kPi * p.carrier_hz / pc.speed_of_light_m_s * 1e9;
    return std::sqrt(23.17 * std::pow(wavenumber_term, 7.0 / 6.0) * m2 *
                     std::pow(distance_m, 11.0 / 6.0));
}

std::int64_t model_payload_bits(std::int64_t parameter_count, int bits_per_param,
                                int metadata_overhead_bits) {
    if (parameter_count < 0 || bits_per_param <= 0 || metadata_overhead_bits < 0)
        throw std::domain_error("model_payload_bits: invalid payload shape");
    return parameter_count * bits_per_param + metadata_overhead_bits;
}

std::vector<BudgetLine> rf_budget_table(const RfLinkParams& p, double distance_m,
                                        const PhysicalConstants& pc) {
    const double loss_db = free_space_path_loss_db(distance_m, p.carrier_hz, pc);
    const double noise_w =
        pc.boltzmann_j_per_k * p.noise_temperature_k * p.bandwidth_hz;
    const double snr = rf_snr(p, distance_m, pc);
    const double rx_power_dbm =
        p.tx_power_dbm + p.tx_gain_dbi + p.rx_gain_dbi - loss_db;
    return {
        {"distance", distance_m / 1000.0, "km"},
        {"carrier", p.carrier_hz / 1e9, "GHz"},
        {"tx_power", p.tx_power_dbm, "dBm"},
        {"tx_gain", p.tx_gain_dbi, "dBi"},
        {"rx_gain", p.rx_gain_dbi, "dBi"},
        {"path_loss", loss_db, "dB"},
        {"rx_power", rx_power_dbm, "dBm"},
        {"noise_power", to_db(noise_w) + 30.0, "dBm"},
        {"snr", to_db(snr), "dB"},
        {"shannon_rate", shannon_rate_bps(snr, p.bandwidth_hz) / 1e6, "Mbps"},
    };
}

std::vector<BudgetLine> fso_budget_table(const FsoLinkParams& p, double distance_m,
                                         double altitude_m, double data_rate_bps,
                                         const PhysicalConstants& pc) {
    const FsoGain g = fso_channel_gain(p, distance_m);
    const double lg = fso_geometric_loss(p, distance_m);
    const double lt = fso_turbulence_loss(p, distance_m, altitude_m, pc);
    const double m2 = hv_refractive_index(p, altitude_m);
    const double snr = fso_snr(p, g.gain, data_rate_bps);
    std::vector<BudgetLine> rows{
        {"distance", distance_m / 1000.0, "km"},
        {"tx_power", p.tx_power_dbm, "dBm"},
        {"channel_gain", g.gain > 0.0 ? to_db(g.gain) : -999.0, "dB"},
        {"geometric_loss", to_db(lg), "dB"},
        {"hv_structure", m2, "m^(-2/3)"},
        {"turbulence_loss", lt > 0.0 ? to_db(lt) : 0.0, "dB"},
        {"snr", snr > 0.0 ? to_db(snr) : -999.0, "dB"},
        {"shannon_rate", shannon_rate_bps(snr, p.bandwidth_hz) / 1e6, "Mbps"},
    };
    if (g.outside_field_of_view)
        rows.push_back({"field_of_view", 0.0, "out-of-view"});
    return rows;
}

} // namespace leofl::links

#include <doctest.h>

#include "leofl/links.hpp"

#include <cmath>
#include <numbers>

using namespace leofl;
using links::FsoLinkParams;
using links::RfLinkParams;
using orbital::PhysicalConstants;

namespace {
constexpr double kPi = std::numbers::pi;
}

TEST_SUITE("links") {

TEST_CASE("free-space path loss matches the frozen reference") {
    PhysicalConstants pc;
    // 1000 km at 2.4 GHz, 30-digit reference values.
    CHECK(links::free_space_path_loss(1.0e6, 2.4e9, pc) ==
          doctest::Approx(1.01204728843153e16).epsilon(1e-12));
    CHECK(links::free_space_path_loss_db(1.0e6, 2.4e9, pc) ==
          doctest::Approx(160.052008056115).epsilon(1e-12));
    CHECK_THROWS_AS(links::free_space_path_loss(0.0, 2.4e9, pc), std::domain_error);
    CHECK_THROWS_AS(links::free_space_path_loss(1.0, -1.0, pc), std::domain_error);
    // dB and linear stay mutually consistent across scales.
    for (double d : {1.0e4, 3.3e5, 2.0e6, 4.5e7}) {
        const double lin = links::free_space_path_loss(d, 2.4e9, pc);
        const double db = links::free_space_path_loss_db(d, 2.4e9, pc);
        CHECK(10.0 * std::log10(lin) == doctest::Approx(db).epsilon(1e-12));
    }
}

TEST_CASE("rf snr reproduces the default link budget") {
    PhysicalConstants pc;
    RfLinkParams p; // 40 dBm, 6.98 dBi both ends, 354.81 K, 1 MHz, 2.4 GHz
    const double snr = links::rf_snr(p, 2.0e6, pc);
    CHECK(snr == doctest::Approx(1.25504722807941).epsilon(1e-12));
    CHECK(links::to_db(snr) == doctest::Approx(0.986600688516035).epsilon(1e-9));
    // Monotone decreasing in range.
    CHECK(links::rf_snr(p, 1.0e6, pc) > snr);
    CHECK(links::rf_snr(p, 4.0e6, pc) < snr);
}

TEST_CASE("shannon capacity") {
    const double snr15db = std::pow(10.0, 1.5);
    CHECK(links::shannon_rate_bps(snr15db, 1.0e6) ==
          doctest::Approx(5027807.67335052).epsilon(1e-12));
    CHECK(links::shannon_rate_bps(0.0, 1.0e6) == 0.0);
    CHECK(links::shannon_rate_bps(snr15db, 2.0e6) ==
          doctest::Approx(2.0 * 5027807.67335052).epsilon(1e-12));
    CHECK_THROWS_AS(links::shannon_rate_bps(-0.1, 1.0e6), std::domain_error);
}

TEST_CASE("link delay splits into serialization, propagation and processing") {
    PhysicalConstants pc;
    links::TransmissionSpec spec;
    spec.payload_samples = 1'000'000;
    spec.bits_per_sample = 32.0;
    spec.data_rate_bps = 16.0e6;
    CHECK(links::link_delay_s(spec, 0.0, pc) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(links::link_delay_s(spec, pc.speed_of_light_m_s, pc) ==
          doctest::Approx(3.0).epsilon(1e-15));
    spec.proc_delay_sender_s = 0.25;
    spec.proc_delay_receiver_s = 0.75;
    CHECK(links::link_delay_s(spec, 0.0, pc) == doctest::Approx(3.0).epsilon(1e-15));
    spec.payload_samples = -1;
    CHECK_THROWS_AS(links::link_delay_s(spec, 0.0, pc), std::domain_error);
}

TEST_CASE("fso channel gain: unity construction and field-of-view cutoff") {
    FsoLinkParams p;
    p.lambertian_order = 1.0;
    p.detector_area_m2 = 2.0 * kPi;
    p.viewing_angle_rad = 0.0;
    p.filter_transmission = 1.0;
    p.concentrator_gain = 1.0;
    p.incidence_angle_rad = 0.0;
    const auto g = links::fso_channel_gain(p, 1.0);
    CHECK_FALSE(g.outside_field_of_view);
    CHECK(g.gain == doctest::Approx(2.0).epsilon(1e-12));

    // Gain falls off with the inverse square of range.
    const auto far = links::fso_channel_gain(p, 10.0);
    CHECK(far.gain == doctest::Approx(0.02).epsilon(1e-12));

    p.incidence_angle_rad = kPi / 2.0;
    const auto blind = links::fso_channel_gain(p, 1.0);
    CHECK(blind.outside_field_of_view);
    CHECK(blind.gain == 0.0);
}

TEST_CASE("fso snr follows the square-law detector model") {
    FsoLinkParams p;
    p.tx_power_dbm = 10.0; // 10 mW
    p.responsivity = 0.5;
    p.noise_variance = 1e-13;
    p.bandwidth_hz = 1e6;
    const double gain = 1e-3;
    // (rho * G * Pt)^2 * B / (N * R)
    const double s = 0.5 * gain * 0.01;
    const double expect = s * s * 1e6 / (1e-13 * 16e6);
    CHECK(links::fso_snr(p, gain, 16e6) == doctest::Approx(expect).epsilon(1e-12));
    CHECK_THROWS_AS(links::fso_snr(p, -1.0, 16e6), std::domain_error);
}

TEST_CASE("fso geometric capture matches the aperture-over-beam ratio") {
    FsoLinkParams p;
    p.aperture_radius_m = 0.05;
    p.divergence_angle_rad = 1e-3;
    CHECK(links::fso_geometric_loss(p, 5.0e5) ==
          doctest::Approx(4.0e-8).epsilon(1e-12));
}

TEST_CASE("stratified refractive-index profile matches frozen references") {
    FsoLinkParams p;
    p.hv_constant = 1.7e-14;
    p.wind_speed_m_s = 0.0;
    CHECK(links::hv_refractive_index(p, 20'000.0) ==
          doctest::Approx(4.37291133924405e-22).epsilon(1e-12));
    p.wind_speed_m_s = 21.0;
    CHECK(links::hv_refractive_index(p, 20'000.0) ==
          doctest::Approx(7.58853881636756e-19).epsilon(1e-12));
    // Sea level is dominated by the surface term.
    CHECK(links::hv_refractive_index(p, 0.0) ==
          doctest::Approx(1.7e-14 + 2.7e-16).epsilon(1e-12));
    CHECK_THROWS_AS(links::hv_refractive_index(p, -1.0), std::domain_error);
}

TEST_CASE("turbulence loss matches the frozen reference") {
    PhysicalConstants pc;
    FsoLinkParams p;
    p.carrier_hz = 2.4e9;
    p.wind_speed_m_s = 21.0;
    p.hv_constant = 1.7e-14;
    CHECK(links::fso_turbulence_loss(p, 2.0e6, 20'000.0, pc) ==
          doctest::Approx(4375.91620515599).epsilon(1e-9));
}

TEST_CASE("model payload sizing") {
    CHECK(links::model_payload_bits(50'890) == 50'890LL * 32 + 1024);
    CHECK(links::model_payload_bits(0) == 1024);
    CHECK(links::model_payload_bits(10, 16, 64) == 224);
    CHECK_THROWS_AS(links::model_payload_bits(-1), std::domain_error);
}

TEST_CASE("rf budget table is self-consistent in the dB domain") {
    PhysicalConstants pc;
    RfLinkParams p;
    const auto rows = links::rf_budget_table(p, 2.0e6, pc);
    double tx = 0, ga = 0, gb = 0, loss = 0, rx = 0, snr_db = 0;
    for (const auto& r : rows) {
        if (r.label == "tx_power") tx = r.value;
        if (r.label == "tx_gain") ga = r.value;
        if (r.label == "rx_gain") gb = r.value;
        if (r.label == "path_loss") loss = r.value;
        if (r.label == "rx_power") rx = r.value;
        if (r.label == "snr") snr_db = r.value;
    }
    CHECK(rx == doctest::Approx(tx + ga + gb - loss).epsilon(1e-12));
    CHECK(snr_db == doctest::Approx(links::to_db(links::rf_snr(p, 2.0e6, pc)))
                        .epsilon(1e-12));
}

TEST_CASE("fso budget table flags out-of-view receivers") {
    PhysicalConstants pc;
    FsoLinkParams p;
    p.incidence_angle_rad = kPi / 2.0 + 0.01;
    const auto rows = links::fso_budget_table(p, 1.0e6, 20'000.0, 16e6, pc);
    bool flagged = false;
    for (const auto& r : rows)
        if (r.label == "field_of_view") flagged = true;
    CHECK(flagged);
}

}

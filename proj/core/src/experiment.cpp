#include "leofl/experiment.hpp"

#include "leofl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace leofl::experiment {

namespace {

using nlohmann::json;

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw ConfigError("config: " + path + ": " + what);
}

std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
}

void check_keys(const json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed) {
            if (it.key() == k) {
                known = true;
                break;
            }
        }
        if (!known) fail(join(path, it.key()), "unknown key");
    }
}

const json* child(const json& j, const char* key, const std::string& path) {
    if (!j.contains(key)) return nullptr;
    const json& v = j.at(key);
    if (!v.is_object()) fail(join(path, key), "expected an object");
    return &v;
}

double read_double(const json& j, const char* key, double fallback,
                   const std::string& path) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number()) fail(join(path, key), "expected a number");
    return v.get<double>();
}

int read_int(const json& j, const char* key, int fallback,
             const std::string& path) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number_integer()) fail(join(path, key), "expected an integer");
    return v.get<int>();
}

std::uint64_t read_u64(const json& j, const char* key, std::uint64_t fallback,
                       const std::string& path) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<double>() < 0))
        fail(join(path, key), "expected a non-negative integer");
    return v.get<std::uint64_t>();
}

std::string read_string(const json& j, const char* key, std::string fallback,
                        const std::string& path) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_string()) fail(join(path, key), "expected a string");
    return v.get<std::string>();
}

void parse_rf(const json& j, const std::string& path, links::RfLinkParams& rf) {
    check_keys(j, path,
               {"tx_power_dbm", "tx_gain_dbi", "rx_gain_dbi",
                "noise_temperature_k", "bandwidth_hz", "carrier_hz"});
    rf.tx_power_dbm = read_double(j, "tx_power_dbm", rf.tx_power_dbm, path);
    rf.tx_gain_dbi = read_double(j, "tx_gain_dbi", rf.tx_gain_dbi, path);
    rf.rx_gain_dbi = read_double(j, "rx_gain_dbi", rf.rx_gain_dbi, path);
    rf.noise_temperature_k =
        read_double(j, "noise_temperature_k", rf.noise_temperature_k, path);
    rf.bandwidth_hz = read_double(j, "bandwidth_hz", rf.bandwidth_hz, path);
    rf.carrier_hz = read_double(j, "carrier_hz", rf.carrier_hz, path);
}

void parse_fso(const json& j, const std::string& path, links::FsoLinkParams& fso) {
    check_keys(j, path,
               {"tx_power_dbm", "lambertian_order", "detector_area_m2",
                "viewing_angle_deg", "filter_transmission", "concentrator_gain",
                "incidence_angle_deg", "responsivity", "noise_variance",
                "aperture_radius_m", "divergence_angle_rad", "wind_speed_m_s",
                "hv_constant", "carrier_hz", "bandwidth_hz"});
    fso.tx_power_dbm = read_double(j, "tx_power_dbm", fso.tx_power_dbm, path);
    fso.lambertian_order =
        read_double(j, "lambertian_order", fso.lambertian_order, path);
    fso.detector_area_m2 =
        read_double(j, "detector_area_m2", fso.detector_area_m2, path);
    fso.viewing_angle_rad =
        read_double(j, "viewing_angle_deg", fso.viewing_angle_rad / kDegToRad,
                    path) *
        kDegToRad;
    fso.filter_transmission =
        read_double(j, "filter_transmission", fso.filter_transmission, path);
    fso.concentrator_gain =
        read_double(j, "concentrator_gain", fso.concentrator_gain, path);
    fso.incidence_angle_rad =
        read_double(j, "incidence_angle_deg", fso.incidence_angle_rad / kDegToRad,
                    path) *
        kDegToRad;
    fso.responsivity = read_double(j, "responsivity", fso.responsivity, path);
    fso.noise_variance = read_double(j, "noise_variance", fso.noise_variance, path);
    fso.aperture_radius_m =
        read_double(j, "aperture_radius_m", fso.aperture_radius_m, path);
    fso.divergence_angle_rad =
        read_double(j, "divergence_angle_rad", fso.divergence_angle_rad, path);
    fso.wind_speed_m_s = read_double(j, "wind_speed_m_s", fso.wind_speed_m_s, path);
    fso.hv_constant = read_double(j, "hv_constant", fso.hv_constant, path);
    fso.carrier_hz = read_double(j, "carrier_hz", fso.carrier_hz, path);
    fso.bandwidth_hz = read_double(j, "bandwidth_hz", fso.bandwidth_hz, path);
}

} // namespace

ExperimentConfig parse_config(const json& j) {
    if (!j.is_object()) throw ConfigError("config: root must be a JSON object");
    check_keys(j, "",
               {"algorithm", "seed", "horizon_s", "target_accuracy",
                "constellation", "ground_nodes", "links", "learning", "data",
                "protocol", "sim"});
    ExperimentConfig cfg;
    cfg.algorithm = read_string(j, "algorithm", cfg.algorithm, "");
    cfg.seed = read_u64(j, "seed", cfg.seed, "");
    cfg.horizon_s = read_double(j, "horizon_s", cfg.horizon_s, "");
    cfg.target_accuracy = read_double(j, "target_accuracy", cfg.target_accuracy, "");

    if (const json* c = child(j, "constellation", "")) {
        auto& cc = cfg.constellation;
        check_keys(*c, "constellation",
                   {"num_orbits", "sats_per_orbit", "altitude_m",
                    "inclination_deg", "raan_spread_deg", "interplane_phase_deg"});
        cc.num_orbits = read_int(*c, "num_orbits", cc.num_orbits, "constellation");
        cc.sats_per_orbit =
            read_int(*c, "sats_per_orbit", cc.sats_per_orbit, "constellation");
        cc.altitude_m = read_double(*c, "altitude_m", cc.altitude_m, "constellation");
        cc.inclination_deg =
            read_double(*c, "inclination_deg", cc.inclination_deg, "constellation");
        cc.raan_spread_deg =
            read_double(*c, "raan_spread_deg", cc.raan_spread_deg, "constellation");
        cc.interplane_phase_deg = read_double(*c, "interplane_phase_deg",
                                              cc.interplane_phase_deg,
                                              "constellation");
    }

    if (j.contains("ground_nodes")) {
        const json& arr = j.at("ground_nodes");
        if (!arr.is_array()) fail("ground_nodes", "expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = "ground_nodes[" + std::to_string(i) + "]";
            const json& e = arr[i];
            if (!e.is_object()) fail(path, "expected an object");
            check_keys(e, path,
                       {"id", "kind", "latitude_deg", "longitude_deg",
                        "altitude_m", "min_elevation_deg"});
            GroundNodeConfig g;
            if (!e.contains("id")) fail(path, "missing required key id");
            g.id = read_int(e, "id", 0, path);
            g.kind = read_string(e, "kind", "hap", path);
            if (g.kind != "hap" && g.kind != "gs")
                fail(join(path, "kind"), "must be \"hap\" or \"gs\"");
            if (!e.contains("latitude_deg") || !e.contains("longitude_deg"))
                fail(path, "missing required latitude_deg/longitude_deg");
            g.latitude_deg = read_double(e, "latitude_deg", 0.0, path);
            g.longitude_deg = read_double(e, "longitude_deg", 0.0, path);
            // Sensible per-kind physical defaults; both overridable.
            const bool hap = g.kind == "hap";
            g.altitude_m = read_double(e, "altitude_m", hap ? 20'000.0 : 0.0, path);
            g.min_elevation_deg =
                read_double(e, "min_elevation_deg", hap ? -5.0 : 10.0, path);
            cfg.ground_nodes.push_back(g);
        }
    }

    if (const json* l = child(j, "links", "")) {
        auto& lc = cfg.links;
        check_keys(*l, "links",
                   {"rate_mode", "fixed_rate_bps", "bits_per_param",
                    "metadata_overhead_bits", "proc_delay_satellite_s",
                    "proc_delay_hap_s", "proc_delay_gs_s", "rf", "fso"});
        lc.rate_mode = read_string(*l, "rate_mode", lc.rate_mode, "links");
        lc.fixed_rate_bps =
            read_double(*l, "fixed_rate_bps", lc.fixed_rate_bps, "links");
        lc.bits_per_param = read_int(*l, "bits_per_param", lc.bits_per_param, "links");
        lc.metadata_overhead_bits = read_int(*l, "metadata_overhead_bits",
                                             lc.metadata_overhead_bits, "links");
        lc.proc_delay_satellite_s = read_double(*l, "proc_delay_satellite_s",
                                                lc.proc_delay_satellite_s, "links");
        lc.proc_delay_hap_s =
            read_double(*l, "proc_delay_hap_s", lc.proc_delay_hap_s, "links");
        lc.proc_delay_gs_s =
            read_double(*l, "proc_delay_gs_s", lc.proc_delay_gs_s, "links");
        if (const json* rf = child(*l, "rf", "links")) parse_rf(*rf, "links.rf", lc.rf);
        if (const json* fso = child(*l, "fso", "links"))
            parse_fso(*fso, "links.fso", lc.fso);
    }

    if (const json* l = child(j, "learning", "")) {
        auto& lc = cfg.learning;
        check_keys(*l, "learning",
                   {"learning_rate", "local_epochs", "batch_size", "hidden_layers"});
        lc.learning_rate =
            read_double(*l, "learning_rate", lc.learning_rate, "learning");
        lc.local_epochs = read_int(*l, "local_epochs", lc.local_epochs, "learning");
        lc.batch_size = read_int(*l, "batch_size", lc.batch_size, "learning");
        if (l->contains("hidden_layers")) {
            const json& h = l->at("hidden_layers");
            if (!h.is_array()) fail("learning.hidden_layers", "expected an array");
            lc.hidden_layers.clear();
            for (const json& v : h) {
                if (!v.is_number_integer())
                    fail("learning.hidden_layers", "expected integers");
                lc.hidden_layers.push_back(v.get<int>());
            }
        }
    }

    if (const json* d = child(j, "data", "")) {
        auto& dc = cfg.data;
        check_keys(*d, "data",
                   {"distribution", "source", "samples_per_satellite",
                    "test_samples", "mnist_train_images", "mnist_train_labels",
                    "mnist_test_images", "mnist_test_labels", "two_gaussian_dim"});
        dc.distribution = read_string(*d, "distribution", dc.distribution, "data");
        dc.source = read_string(*d, "source", dc.source, "data");
        dc.samples_per_satellite =
            read_int(*d, "samples_per_satellite", dc.samples_per_satellite, "data");
        dc.test_samples = read_int(*d, "test_samples", dc.test_samples, "data");
        dc.mnist_train_images =
            read_string(*d, "mnist_train_images", dc.mnist_train_images, "data");
        dc.mnist_train_labels =
            read_string(*d, "mnist_train_labels", dc.mnist_train_labels, "data");
        dc.mnist_test_images =
            read_string(*d, "mnist_test_images", dc.mnist_test_images, "data");
        dc.mnist_test_labels =
            read_string(*d, "mnist_test_labels", dc.mnist_test_labels, "data");
        dc.two_gaussian_dim =
            read_int(*d, "two_gaussian_dim", dc.two_gaussian_dim, "data");
    }

    if (const json* p = child(j, "protocol", "")) {
        auto& pc = cfg.protocol;
        check_keys(*p, "protocol",
                   {"compute_delay_s", "chain_direction", "watchdog_timeout_s",
                    "async_eta0"});
        pc.compute_delay_s =
            read_double(*p, "compute_delay_s", pc.compute_delay_s, "protocol");
        pc.chain_direction =
            read_string(*p, "chain_direction", pc.chain_direction, "protocol");
        pc.watchdog_timeout_s = read_double(*p, "watchdog_timeout_s",
                                            pc.watchdog_timeout_s, "protocol");
        pc.async_eta0 = read_double(*p, "async_eta0", pc.async_eta0, "protocol");
    }

    if (const json* s = child(j, "sim", "")) {
        auto& sc = cfg.sim;
        check_keys(*s, "sim",
                   {"eval_period_s", "contact_step_s", "contact_refine_s",
                    "los_margin_m"});
        sc.eval_period_s = read_double(*s, "eval_period_s", sc.eval_period_s, "sim");
        sc.contact_step_s =
            read_double(*s, "contact_step_s", sc.contact_step_s, "sim");
        sc.contact_refine_s =
            read_double(*s, "contact_refine_s", sc.contact_refine_s, "sim");
        sc.los_margin_m = read_double(*s, "los_margin_m", sc.los_margin_m, "sim");
    }

    validate_config(cfg);
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << file.rdbuf();
    std::string text = buf.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) text = "{}"; // empty file means defaults
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
    return parse_config(j);
}

void validate_config(const ExperimentConfig& cfg) {
    const std::set<std::string> algorithms{"fedhap", "fedhap_gs", "star_sync",
                                           "async"};
    if (!algorithms.count(cfg.algorithm))
        fail("algorithm", "unknown algorithm \"" + cfg.algorithm + "\"");
    if (!(cfg.horizon_s >= 0.0)) fail("horizon_s", "must be >= 0");
    if (cfg.target_accuracy < 0.0 || cfg.target_accuracy >= 1.0)
        fail("target_accuracy", "must be in [0, 1); 0 disables early stop");

    const auto& cc = cfg.constellation;
    if (cc.num_orbits < 1) fail("constellation.num_orbits", "must be >= 1");
    if (cc.sats_per_orbit < 1 || cc.sats_per_orbit >= orbital::kSatIdStride)
        fail("constellation.sats_per_orbit", "out of range");
    if (!(cc.altitude_m > 0.0)) fail("constellation.altitude_m", "must be > 0");
    if (cc.inclination_deg < 0.0 || cc.inclination_deg > 180.0)
        fail("constellation.inclination_deg", "must be in [0, 180]");

    std::set<int> ids;
    for (std::size_t i = 0; i < cfg.ground_nodes.size(); ++i) {
        const auto& g = cfg.ground_nodes[i];
        const std::string path = "ground_nodes[" + std::to_string(i) + "]";
        if (g.kind != "hap" && g.kind != "gs") fail(path + ".kind", "invalid kind");
        if (g.latitude_deg < -90.0 || g.latitude_deg > 90.0)
            fail(path + ".latitude_deg", "must be in [-90, 90]");
        if (g.altitude_m < 0.0) fail(path + ".altitude_m", "must be >= 0");
        if (g.min_elevation_deg <= -90.0 || g.min_elevation_deg >= 90.0)
            fail(path + ".min_elevation_deg", "must be in (-90, 90)");
        if (!ids.insert(g.id).second) fail(path + ".id", "duplicate node id");
    }
    const std::size_t servers = resolved_ground_nodes(cfg).size();
    if ((cfg.algorithm == "star_sync" || cfg.algorithm == "async") && servers != 1)
        fail("ground_nodes", cfg.algorithm + " requires exactly one server node");
    if (servers == 0) fail("ground_nodes", "need at least one server node");

    const auto& lc = cfg.links;
    if (lc.rate_mode != "fixed" && lc.rate_mode != "shannon")
        fail("links.rate_mode", "must be \"fixed\" or \"shannon\"");
    if (!(lc.fixed_rate_bps > 0.0)) fail("links.fixed_rate_bps", "must be > 0");
    if (lc.bits_per_param < 1) fail("links.bits_per_param", "must be >= 1");
    if (lc.metadata_overhead_bits < 0)
        fail("links.metadata_overhead_bits", "must be >= 0");
    if (lc.proc_delay_satellite_s < 0.0 || lc.proc_delay_hap_s < 0.0 ||
        lc.proc_delay_gs_s < 0.0)
        fail("links", "processing delays must be >= 0");
    if (!(lc.rf.bandwidth_hz > 0.0) || !(lc.rf.carrier_hz > 0.0) ||
        !(lc.rf.noise_temperature_k > 0.0))
        fail("links.rf", "bandwidth, carrier and noise temperature must be > 0");
    if (!(lc.fso.bandwidth_hz > 0.0) || !(lc.fso.carrier_hz > 0.0) ||
        !(lc.fso.responsivity > 0.0) || !(lc.fso.noise_variance > 0.0) ||
        !(lc.fso.aperture_radius_m > 0.0) || !(lc.fso.divergence_angle_rad > 0.0) ||
        !(lc.fso.detector_area_m2 > 0.0))
        fail("links.fso", "physical parameters must be > 0");

    const auto& le = cfg.learning;
    if (!(le.learning_rate > 0.0)) fail("learning.learning_rate", "must be > 0");
    if (le.local_epochs < 1) fail("learning.local_epochs", "must be >= 1");
    if (le.batch_size < 1) fail("learning.batch_size", "must be >= 1");
    for (int h : le.hidden_layers)
        if (h < 1) fail("learning.hidden_layers", "layer sizes must be >= 1");

    const auto& dc = cfg.data;
    if (dc.distribution != "iid" && dc.distribution != "noniid")
        fail("data.distribution", "must be \"iid\" or \"noniid\"");
    const std::set<std::string> sources{"auto", "mnist", "synthetic_digits",
                                        "two_gaussian"};
    if (!sources.count(dc.source)) fail("data.source", "unknown source");
    if (dc.samples_per_satellite < 1)
        fail("data.samples_per_satellite", "must be >= 1");
    if (dc.test_samples < 1) fail("data.test_samples", "must be >= 1");
    if (dc.two_gaussian_dim < 1) fail("data.two_gaussian_dim", "must be >= 1");
    if (dc.source == "mnist" &&
        (dc.mnist_train_images.empty() || dc.mnist_train_labels.empty() ||
         dc.mnist_test_images.empty() || dc.mnist_test_labels.empty()))
        fail("data", "source \"mnist\" requires all four idx paths");

    const auto& pc = cfg.protocol;
    if (pc.compute_delay_s < 0.0) fail("protocol.compute_delay_s", "must be >= 0");
    if (pc.chain_direction != "descending" && pc.chain_direction != "ascending")
        fail("protocol.chain_direction", "must be \"descending\" or \"ascending\"");
    if (!(pc.watchdog_timeout_s > 0.0))
        fail("protocol.watchdog_timeout_s", "must be > 0");
    if (!(pc.async_eta0 > 0.0) || pc.async_eta0 > 1.0)
        fail("protocol.async_eta0", "must be in (0, 1]");

    const auto& sc = cfg.sim;
    if (!(sc.eval_period_s > 0.0)) fail("sim.eval_period_s", "must be > 0");
    if (!(sc.contact_step_s > 0.0)) fail("sim.contact_step_s", "must be > 0");
    if (!(sc.contact_refine_s > 0.0) || sc.contact_refine_s > sc.contact_step_s)
        fail("sim.contact_refine_s", "must be in (0, contact_step_s]");
    if (sc.los_margin_m < 0.0) fail("sim.los_margin_m", "must be >= 0");
}

std::vector<GroundNodeConfig> resolved_ground_nodes(const ExperimentConfig& cfg) {
    if (!cfg.ground_nodes.empty()) return cfg.ground_nodes;
    GroundNodeConfig g;
    g.id = 9001;
    g.latitude_deg = 37.951; // default mid-latitude site
    g.longitude_deg = -91.768;
    if (cfg.algorithm == "fedhap") {
        g.kind = "hap";
        g.altitude_m = 20'000.0;
        g.min_elevation_deg = -5.0;
    } else {
        g.kind = "gs";
        g.altitude_m = 0.0;
        g.min_elevation_deg = 10.0;
    }
    return {g};
}

nlohmann::ordered_json dump_config(const ExperimentConfig& cfg) {
    nlohmann::ordered_json j;
    j["algorithm"] = cfg.algorithm;
    j["seed"] = cfg.seed;
    j["horizon_s"] = cfg.horizon_s;
    j["target_accuracy"] = cfg.target_accuracy;
    const auto& cc = cfg.constellation;
    j["constellation"] = {{"num_orbits", cc.num_orbits},
                          {"sats_per_orbit", cc.sats_per_orbit},
                          {"altitude_m", cc.altitude_m},
                          {"inclination_deg", cc.inclination_deg},
                          {"raan_spread_deg", cc.raan_spread_deg},
                          {"interplane_phase_deg", cc.interplane_phase_deg}};
    j["ground_nodes"] = nlohmann::ordered_json::array();
    for (const auto& g : resolved_ground_nodes(cfg)) {
        j["ground_nodes"].push_back({{"id", g.id},
                                     {"kind", g.kind},
                                     {"latitude_deg", g.latitude_deg},
                                     {"longitude_deg", g.longitude_deg},
                                     {"altitude_m", g.altitude_m},
                                     {"min_elevation_deg", g.min_elevation_deg}});
    }
    const auto& lc = cfg.links;
    j["links"] = {
        {"rate_mode", lc.rate_mode},
        {"fixed_rate_bps", lc.fixed_rate_bps},
        {"bits_per_param", lc.bits_per_param},
        {"metadata_overhead_bits", lc.metadata_overhead_bits},
        {"proc_delay_satellite_s", lc.proc_delay_satellite_s},
        {"proc_delay_hap_s", lc.proc_delay_hap_s},
        {"proc_delay_gs_s", lc.proc_delay_gs_s},
        {"rf",
         {{"tx_power_dbm", lc.rf.tx_power_dbm},
          {"tx_gain_dbi", lc.rf.tx_gain_dbi},
          {"rx_gain_dbi", lc.rf.rx_gain_dbi},
          {"noise_temperature_k", lc.rf.noise_temperature_k},
          {"bandwidth_hz", lc.rf.bandwidth_hz},
          {"carrier_hz", lc.rf.carrier_hz}}},
        {"fso",
         {{"tx_power_dbm", lc.fso.tx_power_dbm},
          {"lambertian_order", lc.fso.lambertian_order},
          {"detector_area_m2", lc.fso.detector_area_m2},
          {"viewing_angle_deg", lc.fso.viewing_angle_rad / kDegToRad},
          {"filter_transmission", lc.fso.filter_transmission},
          {"concentrator_gain", lc.fso.concentrator_gain},
          {"incidence_angle_deg", lc.fso.incidence_angle_rad / kDegToRad},
          {"responsivity", lc.fso.responsivity},
          {"noise_variance", lc.fso.noise_variance},
          {"aperture_radius_m", lc.fso.aperture_radius_m},
          {"divergence_angle_rad", lc.fso.divergence_angle_rad},
          {"wind_speed_m_s", lc.fso.wind_speed_m_s},
          {"hv_constant", lc.fso.hv_constant},
          {"carrier_hz", lc.fso.carrier_hz},
          {"bandwidth_hz", lc.fso.bandwidth_hz}}}};
    const auto& le = cfg.learning;
    j["learning"] = {{"learning_rate", le.learning_rate},
                     {"local_epochs", le.local_epochs},
                     {"batch_size", le.batch_size},
                     {"hidden_layers", le.hidden_layers}};
    const auto& dc = cfg.data;
    j["data"] = {{"distribution", dc.distribution},
                 {"source", dc.source},
                 {"samples_per_satellite", dc.samples_per_satellite},
                 {"test_samples", dc.test_samples},
                 {"mnist_train_images", dc.mnist_train_images},
                 {"mnist_train_labels", dc.mnist_train_labels},
                 {"mnist_test_images", dc.mnist_test_images},
                 {"mnist_test_labels", dc.mnist_test_labels},
                 {"two_gaussian_dim", dc.two_gaussian_dim}};
    const auto& pc = cfg.protocol;
    j["protocol"] = {{"compute_delay_s", pc.compute_delay_s},
                     {"chain_direction", pc.chain_direction},
                     {"watchdog_timeout_s", pc.watchdog_timeout_s},
                     {"async_eta0", pc.async_eta0}};
    const auto& sc = cfg.sim;
    j["sim"] = {{"eval_period_s", sc.eval_period_s},
                {"contact_step_s", sc.contact_step_s},
                {"contact_refine_s", sc.contact_refine_s},
                {"los_margin_m", sc.los_margin_m}};
    return j;
}

orbital::Geometry build_geometry(const ExperimentConfig& cfg) {
    const auto& cc = cfg.constellation;
    orbital::ConstellationSpec spec = orbital::make_walker_delta(
        cc.num_orbits, cc.sats_per_orbit, cc.altitude_m,
        cc.inclination_deg * kDegToRad, cc.raan_spread_deg * kDegToRad,
        cc.interplane_phase_deg * kDegToRad);
    std::vector<orbital::GroundNodeSpec> nodes;
    for (const auto& g : resolved_ground_nodes(cfg)) {
        orbital::GroundNodeSpec n;
        n.node_id = g.id;
        n.kind = g.kind == "hap" ? orbital::NodeKind::Hap : orbital::NodeKind::Gs;
        n.latitude_rad = g.latitude_deg * kDegToRad;
        n.longitude_rad = g.longitude_deg * kDegToRad;
        n.altitude_m = g.altitude_m;
        n.min_elevation_rad = g.min_elevation_deg * kDegToRad;
        nodes.push_back(n);
    }
    return orbital::Geometry(std::move(spec), std::move(nodes),
                             orbital::PhysicalConstants{}, cfg.sim.los_margin_m);
}

net::ContactPlan build_plan(const ExperimentConfig& cfg,
                            const orbital::Geometry& geometry) {
    return net::build_contact_plan(geometry, 0.0, cfg.horizon_s,
                                   cfg.sim.contact_step_s,
                                   cfg.sim.contact_refine_s);
}

AssembledData assemble_data(const ExperimentConfig& cfg,
                            const orbital::ConstellationSpec& spec) {
    const std::uint64_t data_seed = mix64(cfg.seed ^ 0xda7aULL);
    const std::uint64_t part_seed = mix64(cfg.seed ^ 0x9a27ULL);
    const std::uint64_t pick_seed = mix64(cfg.seed ^ 0x7e57ULL);
    const int n_sats = spec.total_satellites();
    const int train_total = n_sats * cfg.data.samples_per_satellite;

    const bool have_paths = !cfg.data.mnist_train_images.empty() &&
                            !cfg.data.mnist_train_labels.empty() &&
                            !cfg.data.mnist_test_images.empty() &&
                            !cfg.data.mnist_test_labels.empty();
    std::string source = cfg.data.source;
    if (source == "auto") source = have_paths ? "mnist" : "synthetic_digits";

    AssembledData out;
    data::Dataset train;
    if (source == "mnist") {
        try {
            train = data::ingest_mnist_idx(cfg.data.mnist_train_images,
                                           cfg.data.mnist_train_labels);
            data::Dataset full_test = data::ingest_mnist_idx(
                cfg.data.mnist_test_images, cfg.data.mnist_test_labels);
            const int want = std::min(cfg.data.test_samples, full_test.size());
            std::vector<int> idx(static_cast<std::size_t>(full_test.size()));
            std::iota(idx.begin(), idx.end(), 0);
            std::mt19937_64 rng(pick_seed);
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(static_cast<std::size_t>(want));
            std::sort(idx.begin(), idx.end());
            out.test = data::subset(full_test, idx);
        } catch (const std::exception&) {
            if (cfg.data.source != "auto") throw;
            source = "synthetic_digits"; // fall through to the generator
        }
    }
    if (source == "synthetic_digits") {
        data::Dataset all =
            data::synthetic_digits(train_total + cfg.data.test_samples, data_seed);
        std::vector<int> head(static_cast<std::size_t>(train_total));
        std::iota(head.begin(), head.end(), 0);
        std::vector<int> tail(static_cast<std::size_t>(cfg.data.test_samples));
        std::iota(tail.begin(), tail.end(), train_total);
        train = data::subset(all, head);
        out.test = data::subset(all, tail);
    } else if (source == "two_gaussian") {
        data::Dataset all = data::synthetic_two_gaussian(
            train_total + cfg.data.test_samples, cfg.data.two_gaussian_dim,
            data_seed);
        std::vector<int> head(static_cast<std::size_t>(train_total));
        std::iota(head.begin(), head.end(), 0);
        std::vector<int> tail(static_cast<std::size_t>(cfg.data.test_samples));
        std::iota(tail.begin(), tail.end(), train_total);
        train = data::subset(all, head);
        out.test = data::subset(all, tail);
    }

    out.shards = cfg.data.distribution == "iid"
                     ? data::partition_iid(train, spec, part_seed)
                     : data::partition_noniid(train, spec, part_seed);
    data::truncate_shards(out.shards, cfg.data.samples_per_satellite);
    out.source_used = source;
    out.feature_dim = train.feature_dim();
    out.num_classes = train.num_classes;
    return out;
}

namespace {

int active_satellite_count(const net::ContactPlan& plan,
                           const orbital::Geometry& geometry, double t) {
    int count = 0;
    for (int sat : geometry.satellite_ids()) {
        for (int server : geometry.server_ids()) {
            if (plan.window_at(server, sat, t)) {
                ++count;
                break;
            }
        }
    }
    return count;
}

} // namespace

RunOutputs run_experiment(const ExperimentConfig& cfg,
                          const net::ContactPlan* plan_override) {
    validate_config(cfg);
    orbital::Geometry geometry = build_geometry(cfg);
    net::ContactPlan plan =
        plan_override ? *plan_override : build_plan(cfg, geometry);
    AssembledData assembled = assemble_data(cfg, geometry.constellation());

    nn::MlpArchitecture arch;
    arch.layer_sizes.push_back(assembled.feature_dim);
    for (int h : cfg.learning.hidden_layers) arch.layer_sizes.push_back(h);
    arch.layer_sizes.push_back(assembled.num_classes);
    arch.validate();
    nn::ModelVector initial = nn::glorot_init(arch, mix64(cfg.seed ^ 0x1217ULL));

    sim::Simulator simulator(cfg.horizon_s);
    sim::TraceSink trace;
    net::LinkSettings link_settings;
    link_settings.rate_mode = cfg.links.rate_mode == "shannon"
                                  ? net::RateMode::ShannonCapacity
                                  : net::RateMode::FixedRate;
    link_settings.fixed_rate_bps = cfg.links.fixed_rate_bps;
    link_settings.rf = cfg.links.rf;
    link_settings.fso = cfg.links.fso;
    link_settings.proc_delay_satellite_s = cfg.links.proc_delay_satellite_s;
    link_settings.proc_delay_hap_s = cfg.links.proc_delay_hap_s;
    link_settings.proc_delay_gs_s = cfg.links.proc_delay_gs_s;
    net::NetworkModel network(geometry, plan, link_settings, simulator, trace);

    nn::HyperParams hyper;
    hyper.learning_rate = cfg.learning.learning_rate;
    hyper.local_epochs = cfg.learning.local_epochs;
    hyper.batch_size = cfg.learning.batch_size;
    hyper.rng_seed = mix64(cfg.seed ^ 0x7121ULL);

    protocol::ProtocolSettings settings;
    settings.compute_delay_s = cfg.protocol.compute_delay_s;
    settings.chain_step = cfg.protocol.chain_direction == "ascending" ? +1 : -1;
    settings.watchdog_timeout_s = cfg.protocol.watchdog_timeout_s;
    settings.bits_per_param = cfg.links.bits_per_param;
    settings.metadata_overhead_bits = cfg.links.metadata_overhead_bits;
    settings.async_eta0 = cfg.protocol.async_eta0;

    RunOutputs outputs;
    auto& rows = outputs.metrics;
    protocol::EngineBase* engine = nullptr;
    std::int64_t evaluated_version = -1;
    double accuracy = 0.0;
    double loss = 0.0;
    double time_to_target = -1.0;
    bool stopped_on_target = false;

    auto eval = [&](double t) {
        if (engine->model_version() != evaluated_version) {
            accuracy = nn::evaluate_accuracy(engine->global_model(), arch,
                                             assembled.test);
            loss = nn::dataset_loss(engine->global_model(), arch, assembled.test);
            evaluated_version = engine->model_version();
        }
        MetricsRow row{t,
                       engine->rounds_completed(),
                       accuracy,
                       loss,
                       network.cumulative_bits(),
                       active_satellite_count(plan, geometry, t)};
        if (!rows.empty() && rows.back().sim_time_s == t) {
            rows.back() = row; // one row per instant, latest state wins
        } else {
            rows.push_back(row);
        }
        trace.record(t, "eval", -1, -1, 0, engine->rounds_completed());
        if (cfg.target_accuracy > 0.0 && accuracy >= cfg.target_accuracy &&
            time_to_target < 0.0) {
            time_to_target = t;
            stopped_on_target = true;
            simulator.request_stop();
        }
    };

    protocol::EngineCallbacks callbacks;
    // The asynchronous server blends far too often to evaluate on every
    // update; it is sampled on the periodic checkpoints only.
    const bool eval_on_update = cfg.algorithm != "async";
    callbacks.on_model_updated = [&](double t) {
        if (eval_on_update) eval(t);
    };

    std::unique_ptr<protocol::EngineBase> owned;
    if (cfg.algorithm == "fedhap" || cfg.algorithm == "fedhap_gs") {
        owned = std::make_unique<protocol::FedHapEngine>(
            simulator, network, geometry, plan, arch, assembled.shards, hyper,
            settings, initial, trace, callbacks);
    } else if (cfg.algorithm == "star_sync") {
        owned = std::make_unique<protocol::StarSyncEngine>(
            simulator, network, geometry, plan, arch, assembled.shards, hyper,
            settings, initial, trace, callbacks);
    } else {
        owned = std::make_unique<protocol::AsyncEngine>(
            simulator, network, geometry, plan, arch, assembled.shards, hyper,
            settings, initial, trace, callbacks);
    }
    engine = owned.get();

    std::function<void()> checkpoint = [&]() {
        eval(simulator.now_s());
        const double next = simulator.now_s() + cfg.sim.eval_period_s;
        if (next <= cfg.horizon_s && !simulator.stop_requested()) {
            simulator.schedule(next, sim::EventKind::EvalCheckpoint, checkpoint);
        }
    };
    simulator.schedule(0.0, sim::EventKind::EvalCheckpoint, checkpoint);

    engine->start(0.0);
    const sim::Simulator::RunResult rr = simulator.run();
    if (rows.empty() || rows.back().sim_time_s < rr.end_time_s) eval(rr.end_time_s);

    RunSummary& s = outputs.summary;
    s.algorithm = cfg.algorithm;
    s.seed = cfg.seed;
    s.end_time_s = rr.end_time_s;
    s.rounds_completed = engine->rounds_completed();
    if (auto* fh = dynamic_cast<protocol::FedHapEngine*>(engine)) {
        s.reschedules = fh->reschedule_count();
    }
    s.final_accuracy = rows.empty() ? 0.0 : rows.back().test_accuracy;
    s.final_loss = rows.empty() ? 0.0 : rows.back().test_loss;
    s.target_accuracy = cfg.target_accuracy;
    s.time_to_target_s = time_to_target;
    s.total_bits_transferred = network.cumulative_bits();
    s.events_processed = rr.processed_events;
    s.starved = rr.starved;
    s.stopped_on_target = stopped_on_target;
    s.data_source_used = assembled.source_used;

    outputs.trace = std::move(trace);
    outputs.contact_entries = plan.all_sorted();
    return outputs;
}

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
    std::string out =
        "sim_time_s,round,test_accuracy,test_loss,cumulative_bits_transferred,"
        "active_satellite_count\n";
    char buf[160];
    for (const MetricsRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.6f,%d,%.6f,%.6f,%lld,%d\n",
                      r.sim_time_s, r.round, r.test_accuracy, r.test_loss,
                      static_cast<long long>(r.cumulative_bits_transferred),
                      r.active_satellite_count);
        out += buf;
    }
    return out;
}

std::string contact_entries_to_json(
    const std::vector<net::ContactPlan::Entry>& entries) {
    std::string out = "[";
    char buf[160];
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        std::snprintf(buf, sizeof(buf),
                      "%s\n  {\"a\": %d, \"b\": %d, \"start_s\": %.6f, "
                      "\"end_s\": %.6f}",
                      i == 0 ? "" : ",", e.a, e.b, e.window.start_s,
                      e.window.end_s);
        out += buf;
    }
    out += entries.empty() ? "]\n" : "\n]\n";
    return out;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream file(path, std::ios::binary);
    if (!file) throw ConfigError("cannot open output file: " + path);
    file.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!file) throw ConfigError("failed writing output file: " + path);
}

} // namespace leofl::experiment

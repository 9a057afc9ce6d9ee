#pragma once

#include "leofl/data.hpp"
#include "leofl/links.hpp"
#include "leofl/network.hpp"
#include "leofl/nn.hpp"
#include "leofl/orbital.hpp"
#include "leofl/protocol.hpp"
#include "leofl/simengine.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace leofl::experiment {

// Configuration mirrors the JSON file one to one. Angles that are natural to
// write in degrees stay in degrees here and are converted where the geometry
// is built, so a load/dump round trip is lossless.

struct ConstellationConfig {
    int num_orbits = 5;
    int sats_per_orbit = 8;
    double altitude_m = 2'000'000.0;
    double inclination_deg = 80.0;
    double raan_spread_deg = 360.0;
    double interplane_phase_deg = 0.0;
};

struct GroundNodeConfig {
    int id = 9001;
    std::string kind = "hap"; // "hap" | "gs"
    double latitude_deg = 0.0;
    double longitude_deg = 0.0;
    double altitude_m = 0.0;
    double min_elevation_deg = 0.0;
};

struct LinksConfig {
    std::string rate_mode = "fixed"; // "fixed" | "shannon"
    double fixed_rate_bps = 16.0e6;
    int bits_per_param = 32;
    int metadata_overhead_bits = 1024;
    double proc_delay_satellite_s = 0.0;
    double proc_delay_hap_s = 0.0;
    double proc_delay_gs_s = 0.0;
    links::RfLinkParams rf;
    links::FsoLinkParams fso;
};

struct LearningConfig {
    double learning_rate = 0.01;
    int local_epochs = 1;
    int batch_size = 32;
    std::vector<int> hidden_layers{64};
};

struct DataConfig {
    std::string distribution = "noniid"; // "iid" | "noniid"
    // "auto" uses the IDX files when all four paths are set, falling back to
    // the procedural digit generator otherwise.
    std::string source = "auto"; // "auto" | "mnist" | "synthetic_digits" | "two_gaussian"
    int samples_per_satellite = 600;
    int test_samples = 2000;
    std::string mnist_train_images;
    std::string mnist_train_labels;
    std::string mnist_test_images;
    std::string mnist_test_labels;
    int two_gaussian_dim = 16;
};

struct ProtocolConfig {
    double compute_delay_s = 60.0;
    std::string chain_direction = "descending"; // "descending" | "ascending"
    double watchdog_timeout_s = 21'600.0;
    double async_eta0 = 0.5;
};

struct SimConfig {
    double eval_period_s = 3600.0;
    double contact_step_s = 10.0;
    double contact_refine_s = 0.1;
    double los_margin_m = 0.0;
};

struct ExperimentConfig {
    std::string algorithm = "fedhap"; // fedhap | fedhap_gs | star_sync | async
    std::uint64_t seed = 1;
    double horizon_s = 259'200.0;
    double target_accuracy = 0.0; // <= 0 disables early stop
    ConstellationConfig constellation;
    // Empty means "use the algorithm's default server placement".
    std::vector<GroundNodeConfig> ground_nodes;
    LinksConfig links;
    LearningConfig learning;
    DataConfig data;
    ProtocolConfig protocol;
    SimConfig sim;
};

// Parse and validate. Unknown keys are rejected by full path; an empty file
// yields the defaults.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::string& path);
void validate_config(const ExperimentConfig& cfg);
// Normalized dump: every field present, defaults resolved, degrees preserved.
nlohmann::ordered_json dump_config(const ExperimentConfig& cfg);

// Server placement used when the config leaves ground_nodes empty: a single
// HAP for fedhap, the same site as a ground station for the single-server
// algorithms.
std::vector<GroundNodeConfig> resolved_ground_nodes(const ExperimentConfig& cfg);

orbital::Geometry build_geometry(const ExperimentConfig& cfg);
net::ContactPlan build_plan(const ExperimentConfig& cfg,
                            const orbital::Geometry& geometry);

struct AssembledData {
    data::Dataset test;
    std::vector<data::DataShard> shards;
    std::string source_used;
    int feature_dim = 0;
    int num_classes = 0;
};
AssembledData assemble_data(const ExperimentConfig& cfg,
                            const orbital::ConstellationSpec& spec);

struct MetricsRow {
    double sim_time_s = 0.0;
    int round = 0;
    double test_accuracy = 0.0;
    double test_loss = 0.0;
    std::int64_t cumulative_bits_transferred = 0;
    int active_satellite_count = 0;
};

struct RunSummary {
    std::string algorithm;
    std::uint64_t seed = 0;
    double end_time_s = 0.0;
    int rounds_completed = 0;
    int reschedules = 0;
    double final_accuracy = 0.0;
    double final_loss = 0.0;
    double target_accuracy = 0.0;
    double time_to_target_s = -1.0; // first metrics row at/over target, -1 if never
    std::int64_t total_bits_transferred = 0;
    std::size_t events_processed = 0;
    bool starved = false;
    bool stopped_on_target = false;
    std::string data_source_used;
};

struct RunOutputs {
    std::vector<MetricsRow> metrics;
    RunSummary summary;
    sim::TraceSink trace;
    std::vector<net::ContactPlan::Entry> contact_entries;
};

// Full pipeline: geometry, contact plan, data, engine, event loop, metrics.
// `plan_override` substitutes a prebuilt contact plan (scenario injection);
// geometry and data are unaffected by it.
RunOutputs run_experiment(const ExperimentConfig& cfg,
                          const net::ContactPlan* plan_override = nullptr);

std::string metrics_to_csv(const std::vector<MetricsRow>& rows);
std::string contact_entries_to_json(const std::vector<net::ContactPlan::Entry>& entries);
void write_text_file(const std::string& path, const std::string& content);

} // namespace leofl::experiment

#include "leofl/errors.hpp"
#include "leofl/experiment.hpp"
#include "leofl/links.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

namespace {

namespace fs = std::filesystem;
using namespace leofl;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<double> horizon_s;
    std::optional<double> target_accuracy;
};

experiment::ExperimentConfig load_with_overrides(const CommonArgs& args) {
    experiment::ExperimentConfig cfg;
    if (!args.config_path.empty()) {
        cfg = experiment::load_config_file(args.config_path);
    }
    if (args.seed) cfg.seed = *args.seed;
    if (args.horizon_s) cfg.horizon_s = *args.horizon_s;
    if (args.target_accuracy) cfg.target_accuracy = *args.target_accuracy;
    experiment::validate_config(cfg);
    return cfg;
}

void ensure_out_dir(const std::string& dir) {
    if (dir.empty()) throw ConfigError("--out-dir is required for this command");
    fs::create_directories(dir);
}

nlohmann::ordered_json summary_json(const experiment::RunSummary& s) {
    nlohmann::ordered_json j;
    j["algorithm"] = s.algorithm;
    j["seed"] = s.seed;
    j["end_time_s"] = s.end_time_s;
    j["rounds_completed"] = s.rounds_completed;
    j["reschedules"] = s.reschedules;
    j["final_accuracy"] = s.final_accuracy;
    j["final_loss"] = s.final_loss;
    j["target_accuracy"] = s.target_accuracy;
    j["time_to_target_s"] = s.time_to_target_s;
    j["total_bits_transferred"] = s.total_bits_transferred;
    j["events_processed"] = s.events_processed;
    j["starved"] = s.starved;
    j["stopped_on_target"] = s.stopped_on_target;
    j["data_source_used"] = s.data_source_used;
    return j;
}

int cmd_run(const CommonArgs& args) {
    experiment::ExperimentConfig cfg = load_with_overrides(args);
    ensure_out_dir(args.out_dir);
    const fs::path out(args.out_dir);

    experiment::RunOutputs outputs = experiment::run_experiment(cfg);

    experiment::write_text_file((out / "config_used.json").string(),
                                experiment::dump_config(cfg).dump(2) + "\n");
    experiment::write_text_file((out / "metrics.csv").string(),
                                experiment::metrics_to_csv(outputs.metrics));
    outputs.trace.write_jsonl((out / "trace.jsonl").string());
    experiment::write_text_file(
        (out / "contact_plan.json").string(),
        experiment::contact_entries_to_json(outputs.contact_entries));
    experiment::write_text_file((out / "summary.json").string(),
                                summary_json(outputs.summary).dump(2) + "\n");

    const auto& s = outputs.summary;
    std::printf("algorithm            %s\n", s.algorithm.c_str());
    std::printf("data source          %s\n", s.data_source_used.c_str());
    std::printf("simulated time       %.1f s\n", s.end_time_s);
    std::printf("rounds completed     %d\n", s.rounds_completed);
    std::printf("reschedules          %d\n", s.reschedules);
    std::printf("final accuracy       %.4f\n", s.final_accuracy);
    std::printf("final loss           %.4f\n", s.final_loss);
    if (s.target_accuracy > 0.0) {
        if (s.time_to_target_s >= 0.0)
            std::printf("time to %.0f%%          %.1f s\n",
                        s.target_accuracy * 100.0, s.time_to_target_s);
        else
            std::printf("time to %.0f%%          not reached\n",
                        s.target_accuracy * 100.0);
    }
    std::printf("bits transferred     %lld\n",
                static_cast<long long>(s.total_bits_transferred));
    std::printf("outputs written to   %s\n", out.string().c_str());
    return 0;
}

int cmd_contact_plan(const CommonArgs& args) {
    experiment::ExperimentConfig cfg = load_with_overrides(args);
    orbital::Geometry geometry = experiment::build_geometry(cfg);
    net::ContactPlan plan = experiment::build_plan(cfg, geometry);
    const std::string body =
        experiment::contact_entries_to_json(plan.all_sorted());
    if (args.out_dir.empty()) {
        std::fputs(body.c_str(), stdout);
    } else {
        ensure_out_dir(args.out_dir);
        const fs::path out(args.out_dir);
        experiment::write_text_file((out / "contact_plan.json").string(), body);
        std::printf("wrote %zu windows to %s\n", plan.all_sorted().size(),
                    (out / "contact_plan.json").string().c_str());
    }
    return 0;
}

int cmd_link_budget(const CommonArgs& args, int node_a, int node_b, double t_s) {
    experiment::ExperimentConfig cfg = load_with_overrides(args);
    orbital::Geometry geometry = experiment::build_geometry(cfg);
    if (!geometry.has_node(node_a) || !geometry.has_node(node_b))
        throw ConfigError("link-budget: unknown node id");
    const double d = geometry.distance_m(node_a, node_b, t_s);
    const bool rf = geometry.kind(node_a) == orbital::NodeKind::Gs ||
                    geometry.kind(node_b) == orbital::NodeKind::Gs;
    std::printf("pair %d <-> %d at t=%.1f s: distance %.1f m, medium %s\n",
                node_a, node_b, t_s, d, rf ? "rf" : "fso");
    const auto& pc = geometry.constants();
    std::vector<links::BudgetLine> table;
    if (rf) {
        table = links::rf_budget_table(cfg.links.rf, d, pc);
    } else {
        const double z =
            std::min(geometry.altitude_m(node_a), geometry.altitude_m(node_b));
        table = links::fso_budget_table(cfg.links.fso, d, z,
                                        cfg.links.fixed_rate_bps, pc);
    }
    for (const auto& line : table) {
        std::printf("  %-30s %18.6g %s\n", line.label.c_str(), line.value,
                    line.unit.c_str());
    }
    return 0;
}

int cmd_dataset_check(const CommonArgs& args) {
    experiment::ExperimentConfig cfg = load_with_overrides(args);
    orbital::Geometry geometry = experiment::build_geometry(cfg);
    experiment::AssembledData assembled =
        experiment::assemble_data(cfg, geometry.constellation());

    std::printf("source               %s\n", assembled.source_used.c_str());
    std::printf("feature dim          %d\n", assembled.feature_dim);
    std::printf("classes              %d\n", assembled.num_classes);
    std::printf("test samples         %d\n", assembled.test.size());
    std::printf("shards               %zu\n", assembled.shards.size());

    std::map<int, std::int64_t> class_counts;
    std::int64_t total = 0;
    int min_shard = INT_MAX, max_shard = 0;
    double checksum = 0.0;
    for (const auto& shard : assembled.shards) {
        for (int label : shard.labels) ++class_counts[label];
        total += shard.size();
        min_shard = std::min(min_shard, shard.size());
        max_shard = std::max(max_shard, shard.size());
        checksum += shard.features.sum();
    }
    std::printf("train samples        %lld (shard size %d..%d)\n",
                static_cast<long long>(total), min_shard, max_shard);
    std::printf("feature checksum     %.6f\n", checksum);
    std::printf("class histogram (train):\n");
    for (const auto& [label, count] : class_counts) {
        std::printf("  class %d: %lld\n", label, static_cast<long long>(count));
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated learning over a LEO constellation: "
                 "discrete-event simulator"};
    app.require_subcommand(1);

    CommonArgs args;
    int node_a = 0;
    int node_b = 0;
    double t_s = 0.0;

    auto add_common = [&](CLI::App* sub, bool with_target) {
        sub->add_option("--config", args.config_path,
                        "JSON config file (defaults when omitted)");
        sub->add_option("--seed", [&args](const CLI::results_t& r) {
            args.seed = std::stoull(r.at(0));
            return true;
        }, "Override the experiment seed")->expected(1);
        sub->add_option("--out-dir", args.out_dir, "Output directory");
        sub->add_option("--horizon-s", [&args](const CLI::results_t& r) {
            args.horizon_s = std::stod(r.at(0));
            return true;
        }, "Override the simulation horizon in seconds")->expected(1);
        if (with_target) {
            sub->add_option("--target-accuracy", [&args](const CLI::results_t& r) {
                args.target_accuracy = std::stod(r.at(0));
                return true;
            }, "Stop once test accuracy reaches this value")->expected(1);
        }
    };

    CLI::App* run = app.add_subcommand("run", "Run a federated learning experiment");
    add_common(run, true);

    CLI::App* plan = app.add_subcommand(
        "contact-plan", "Compute and export the visibility windows");
    add_common(plan, false);

    CLI::App* budget = app.add_subcommand(
        "link-budget", "Print the link budget for a node pair");
    add_common(budget, false);
    budget->add_option("--a", node_a, "First node id")->required();
    budget->add_option("--b", node_b, "Second node id")->required();
    budget->add_option("--t", t_s, "Evaluation time in seconds");

    CLI::App* dataset = app.add_subcommand(
        "dataset-check", "Validate and summarize the configured dataset");
    add_common(dataset, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(args);
        if (plan->parsed()) return cmd_contact_plan(args);
        if (budget->parsed()) return cmd_link_budget(args, node_a, node_b, t_s);
        if (dataset->parsed()) return cmd_dataset_check(args);
    } catch (const leofl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const leofl::FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

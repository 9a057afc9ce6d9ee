#include <doctest.h>

#include "leofl/errors.hpp"
#include "leofl/protocol.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <random>
#include <set>
#include <vector>

using namespace leofl;

namespace {

constexpr int kHapId = 9001;
constexpr int kGsId = 9002;

// Test-local transcription of the round-seed derivation (splitmix64).
std::uint64_t mix64_ref(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

orbital::Geometry one_orbit_geometry(bool with_gs) {
    using std::numbers::pi;
    auto spec = orbital::make_walker_delta(1, 3, 2.0e6, 80.0 * pi / 180.0, 0.0, 0.0);
    std::vector<orbital::GroundNodeSpec> ground;
    orbital::GroundNodeSpec hap;
    hap.node_id = kHapId;
    hap.kind = orbital::NodeKind::Hap;
    hap.latitude_rad = 37.95 * pi / 180.0;
    hap.longitude_rad = -91.77 * pi / 180.0;
    hap.altitude_m = 20'000.0;
    hap.min_elevation_rad = -5.0 * pi / 180.0;
    ground.push_back(hap);
    if (with_gs) {
        orbital::GroundNodeSpec gs;
        gs.node_id = kGsId;
        gs.kind = orbital::NodeKind::Gs;
        gs.latitude_rad = 32.78 * pi / 180.0;
        gs.longitude_rad = -96.80 * pi / 180.0;
        gs.altitude_m = 0.0;
        gs.min_elevation_rad = 10.0 * pi / 180.0;
        ground.push_back(gs);
    }
    return orbital::Geometry(std::move(spec), std::move(ground));
}

data::DataShard make_shard(int owner, int n, std::uint64_t seed) {
    data::DataShard s;
    s.owner_sat_id = owner;
    s.features.resize(n, 4);
    s.labels.resize(static_cast<size_t>(n));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < 4; ++j) s.features(i, j) = normal(rng);
        s.labels[static_cast<size_t>(i)] = i % 3;
    }
    return s;
}

std::vector<orbital::ContactWindow> window(double a, double b) {
    orbital::ContactWindow w;
    w.start_s = a;
    w.end_s = b;
    return {w};
}

struct FedProbe : protocol::FedHapEngine {
    using protocol::FedHapEngine::FedHapEngine;
    nn::HyperParams hyper(int r) const { return hyper_for_round(r); }
};

// Everything a protocol scenario needs, wired up in dependency order.
struct Rig {
    orbital::Geometry geom;
    net::ContactPlan plan;
    sim::Simulator sim;
    sim::TraceSink trace;
    net::NetworkModel net;
    nn::MlpArchitecture arch{{4, 3}};
    std::vector<data::DataShard> shards;
    nn::HyperParams hyper;
    protocol::ProtocolSettings settings;
    nn::ModelVector g0;

    Rig(bool with_gs, double horizon_s, std::vector<int> shard_sizes)
        : geom(one_orbit_geometry(with_gs)),
          sim(horizon_s),
          net(geom, plan, net::LinkSettings{}, sim, trace) {
        for (int k = 0; k < 3; ++k)
            shards.push_back(
                make_shard(k, shard_sizes[static_cast<size_t>(k)],
                           100 + static_cast<std::uint64_t>(k)));
        hyper.learning_rate = 0.05;
        hyper.local_epochs = 1;
        hyper.batch_size = 4;
        hyper.rng_seed = 1234;
        settings.compute_delay_s = 1.0;
        g0 = nn::glorot_init(arch, 77);
    }

    nn::HyperParams hyper_ref(int round) const {
        nn::HyperParams h = hyper;
        h.rng_seed = mix64_ref(hyper.rng_seed ^
                               mix64_ref(static_cast<std::uint64_t>(round) + 1));
        return h;
    }

    nn::ModelVector trained(int sat, const nn::ModelVector& base, int round) const {
        return nn::local_train(base, arch, shards[static_cast<size_t>(sat)],
                               hyper_ref(round));
    }
};

double max_abs_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return (a - b).cwiseAbs().maxCoeff();
}

} // namespace

TEST_SUITE("protocol") {

TEST_CASE("per-round hyperparameter seeds follow the documented stream") {
    Rig rig(false, 10.0, {5, 5, 5});
    protocol::EngineCallbacks cb;
    FedProbe eng(rig.sim, rig.net, rig.geom, rig.plan, rig.arch, rig.shards,
                 rig.hyper, rig.settings, rig.g0, rig.trace, cb);
    for (int r : {0, 1, 5, 100}) {
        const auto h = eng.hyper(r);
        CHECK(h.rng_seed == rig.hyper_ref(r).rng_seed);
        CHECK(h.learning_rate == rig.hyper.learning_rate);
        CHECK(h.local_epochs == rig.hyper.local_epochs);
        CHECK(h.batch_size == rig.hyper.batch_size);
    }
    CHECK(eng.hyper(0).rng_seed != eng.hyper(1).rng_seed);
}

TEST_CASE("engine construction validates its inputs") {
    Rig rig(false, 10.0, {5, 5, 5});
    protocol::EngineCallbacks cb;
    auto build = [&](const std::vector<data::DataShard>& shards,
                     const nn::ModelVector& init) {
        protocol::FedHapEngine eng(rig.sim, rig.net, rig.geom, rig.plan, rig.arch,
                                   shards, rig.hyper, rig.settings, init,
                                   rig.trace, cb);
    };
    CHECK_NOTHROW(build(rig.shards, rig.g0));

    std::vector<data::DataShard> missing(rig.shards.begin(), rig.shards.end() - 1);
    CHECK_THROWS_AS(build(missing, rig.g0), ConfigError);

    auto duplicated = rig.shards;
    duplicated.push_back(rig.shards[0]);
    CHECK_THROWS_AS(build(duplicated, rig.g0), ConfigError);

    auto foreign = rig.shards;
    foreign[2].owner_sat_id = 9999;
    CHECK_THROWS_AS(build(foreign, rig.g0), ConfigError);

    auto empty = rig.shards;
    empty[1].features.resize(0, 4);
    empty[1].labels.clear();
    CHECK_THROWS_AS(build(empty, rig.g0), ConfigError);

    nn::ModelVector bad = rig.g0;
    bad.values.resize(7);
    CHECK_THROWS_AS(build(rig.shards, bad), ConfigError);
}

TEST_CASE("chain entry and upload-target selection rules") {
    Rig rig(true, 10.0, {5, 5, 5});
    rig.plan.set(kHapId, 0, window(0.0, 100.0));
    rig.plan.set(kHapId, 1, window(0.0, 200.0));
    rig.plan.set(kHapId, 2, window(500.0, 600.0));
    rig.plan.set(kGsId, 0, window(0.0, 150.0));
    rig.plan.set(kGsId, 1, window(0.0, 150.0));
    rig.plan.set(kGsId, 2, window(500.0, 600.0));
    protocol::EngineCallbacks cb;
    FedProbe eng(rig.sim, rig.net, rig.geom, rig.plan, rig.arch, rig.shards,
                 rig.hyper, rig.settings, rig.g0, rig.trace, cb);

    // Longest remaining window wins.
    CHECK(eng.choose_entry(0, kHapId, 0.0) == 1);
    // Preferred ids beat everything visible.
    CHECK(eng.choose_entry(0, kHapId, 0.0, {0}) == 0);
    // Among several preferred ids the window rule applies again.
    CHECK(eng.choose_entry(0, kHapId, 0.0, {0, 1}) == 1);
    // An invisible preference cannot win.
    CHECK(eng.choose_entry(0, kHapId, 0.0, {2}) == 1);
    // Ties break to the lowest id.
    CHECK(eng.choose_entry(0, kGsId, 0.0) == 0);
    CHECK(eng.choose_entry(0, kHapId, 150.0) == 1);
    CHECK(eng.choose_entry(0, kHapId, 520.0) == 2);
    CHECK_FALSE(eng.choose_entry(0, kHapId, 300.0).has_value());
    CHECK_FALSE(eng.choose_entry(7, kHapId, 0.0).has_value()); // no such orbit

    CHECK(eng.choose_server(0, 0.0) == kGsId);  // 150 s left beats 100 s
    CHECK(eng.choose_server(1, 0.0) == kHapId); // 200 s beats 150 s
    CHECK(eng.choose_server(2, 520.0) == kHapId); // tie: lowest server id
    CHECK_FALSE(eng.choose_server(0, 250.0).has_value());
}

TEST_CASE("full-visibility round: chain folds, reschedule covers the gap") {
    Rig rig(false, 100.0, {5, 7, 9});
    for (int k = 0; k < 3; ++k) rig.plan.set(kHapId, k, window(0.0, 1.0e6));
    rig.plan.set(0, 1, window(0.0, 1.0e6));
    rig.plan.set(1, 2, window(0.0, 1.0e6));
    rig.plan.set(2, 0, window(0.0, 1.0e6));

    protocol::EngineCallbacks cb;
    std::unique_ptr<FedProbe> eng;
    std::vector<std::vector<int>> reschedule_reports;
    cb.on_reschedule = [&](double, const std::vector<int>& orbits) {
        reschedule_reports.push_back(orbits);
    };
    cb.on_model_updated = [&](double) {
        if (eng->rounds_completed() >= 1) rig.sim.request_stop();
    };
    eng = std::make_unique<FedProbe>(rig.sim, rig.net, rig.geom, rig.plan,
                                     rig.arch, rig.shards, rig.hyper,
                                     rig.settings, rig.g0, rig.trace, cb);
    eng->start(0.0);
    const auto r = rig.sim.run();
    CHECK(r.stopped);
    REQUIRE(eng->rounds_completed() == 1);
    CHECK(eng->reschedule_count() == 1);
    CHECK(eng->expired_chains() == 0);

    // Replicate the walk. Entry is satellite 0 (tie on equal windows), the
    // chain steps against the ring index: 0 -> 2, uploads at two covered
    // satellites, and the retry chain starts at the missing satellite 1,
    // steps to the already-trained 0 and uploads.
    const auto t0 = rig.trained(0, rig.g0, 0);
    const auto t1 = rig.trained(1, rig.g0, 0);
    const auto t2 = rig.trained(2, rig.g0, 0);
    const double m0 = 5, m1 = 7, m2 = 9, total = 21;
    Eigen::VectorXd p1 =
        (1.0 - m2 / total) * t0.values + (m2 / total) * t2.values;
    Eigen::VectorXd p2 =
        (1.0 - m0 / total) * t1.values + (m0 / total) * t0.values;
    const Eigen::VectorXd want =
        ((m0 + m2) / total) * p1 + (m1 / total) * p2;
    CHECK(max_abs_diff(eng->global_model().values, want) < 1e-12);

    REQUIRE(reschedule_reports.size() == 1);
    CHECK(reschedule_reports[0] == std::vector<int>{0});

    // Training order and wire sizes pin the protocol shape.
    std::vector<int> train_order;
    for (const auto& rec : rig.trace.records())
        if (rec.kind == "training") train_order.push_back(rec.src);
    CHECK(train_order == std::vector<int>{0, 2, 1});
    const std::int64_t one_model = 15 * 32 + 1024;
    const std::int64_t two_models = 30 * 32 + 1024;
    bool saw_forward = false, saw_upload = false;
    for (const auto& rec : rig.trace.records()) {
        if (rec.kind != "transfer") continue;
        if (rec.src == 0 && rec.dst == 2) {
            CHECK(rec.payload_bits == two_models);
            saw_forward = true;
        }
        if (rec.src == 2 && rec.dst == kHapId) {
            CHECK(rec.payload_bits == one_model);
            saw_upload = true;
        }
        if (rec.src == kHapId) CHECK(rec.payload_bits == one_model);
    }
    CHECK(saw_forward);
    CHECK(saw_upload);
}

TEST_CASE("blocked uploads expire the chain; the retry completes the round") {
    Rig rig(false, 200.0, {5, 5, 5});
    rig.plan.set(kHapId, 0, window(0.0, 3.0));
    rig.plan.set(kHapId, 1, window(50.0, 60.0));
    rig.plan.set(kHapId, 2, window(50.0, 60.0));
    rig.plan.set(0, 1, window(0.0, 1.0e6));
    rig.plan.set(1, 2, window(0.0, 1.0e6));
    rig.plan.set(2, 0, window(0.0, 1.0e6));

    protocol::EngineCallbacks cb;
    std::unique_ptr<FedProbe> eng;
    std::vector<double> reschedule_times;
    cb.on_reschedule = [&](double t, const std::vector<int>& orbits) {
        reschedule_times.push_back(t);
        CHECK(orbits == std::vector<int>{0});
    };
    cb.on_model_updated = [&](double) {
        if (eng->rounds_completed() >= 1) rig.sim.request_stop();
    };
    eng = std::make_unique<FedProbe>(rig.sim, rig.net, rig.geom, rig.plan,
                                     rig.arch, rig.shards, rig.hyper,
                                     rig.settings, rig.g0, rig.trace, cb);
    eng->start(0.0);
    rig.sim.run();

    REQUIRE(eng->rounds_completed() == 1);
    CHECK(eng->reschedule_count() == 1);
    CHECK(eng->expired_chains() == 1);
    REQUIRE(reschedule_times.size() == 1);
    CHECK(reschedule_times[0] < 50.0); // the wave died before the next window
    // The retry could only launch once satellite 1's window opened.
    bool expired_traced = false;
    double aggregation_t = -1.0;
    for (const auto& rec : rig.trace.records()) {
        if (rec.kind == "expire") {
            expired_traced = true;
            CHECK(rec.src == 1); // the walk 0 -> 2 -> 1 died holding sat 1
        }
        if (rec.kind == "aggregation") aggregation_t = rec.t;
    }
    CHECK(expired_traced);
    CHECK(aggregation_t >= 50.0);

    // Fold order of the surviving chain is 1 -> 0 -> 2 with equal masses:
    // coefficients 4/9, 2/9, 1/3.
    const auto t0 = rig.trained(0, rig.g0, 0);
    const auto t1 = rig.trained(1, rig.g0, 0);
    const auto t2 = rig.trained(2, rig.g0, 0);
    const Eigen::VectorXd want = (4.0 / 9.0) * t1.values +
                                 (2.0 / 9.0) * t0.values +
                                 (1.0 / 3.0) * t2.values;
    CHECK(max_abs_diff(eng->global_model().values, want) < 1e-12);
}

TEST_CASE("star baseline: barrier rounds equal the weighted mean exactly") {
    Rig rig(false, 50.0, {5, 7, 9});
    for (int k = 0; k < 3; ++k) rig.plan.set(kHapId, k, window(0.0, 1.0e6));

    protocol::EngineCallbacks cb;
    std::unique_ptr<protocol::StarSyncEngine> eng;
    nn::ModelVector after_round1;
    cb.on_model_updated = [&](double) {
        if (eng->rounds_completed() == 1) after_round1 = eng->global_model();
        if (eng->rounds_completed() >= 2) rig.sim.request_stop();
    };
    eng = std::make_unique<protocol::StarSyncEngine>(
        rig.sim, rig.net, rig.geom, rig.plan, rig.arch, rig.shards, rig.hyper,
        rig.settings, rig.g0, rig.trace, cb);
    eng->start(0.0);
    rig.sim.run();
    REQUIRE(eng->rounds_completed() == 2);

    const auto want1 = aggregate::fedavg_aggregate(
        {rig.trained(0, rig.g0, 0), rig.trained(1, rig.g0, 0),
         rig.trained(2, rig.g0, 0)},
        {5, 7, 9});
    CHECK(max_abs_diff(after_round1.values, want1.values) < 1e-12);

    nn::ModelVector base1 = rig.g0;
    base1.values = want1.values;
    const auto want2 = aggregate::fedavg_aggregate(
        {rig.trained(0, base1, 1), rig.trained(1, base1, 1),
         rig.trained(2, base1, 1)},
        {5, 7, 9});
    CHECK(max_abs_diff(eng->global_model().values, want2.values) < 1e-12);
}

TEST_CASE("async baseline: blends discount by the versions seen since download") {
    Rig rig(false, 100.0, {5, 7, 9});
    for (int k = 0; k < 3; ++k) rig.plan.set(kHapId, k, window(0.0, 1.0e6));

    protocol::EngineCallbacks cb;
    std::unique_ptr<protocol::AsyncEngine> eng;
    cb.on_model_updated = [&](double) {
        if (eng->blends() >= 3) rig.sim.request_stop();
    };
    eng = std::make_unique<protocol::AsyncEngine>(
        rig.sim, rig.net, rig.geom, rig.plan, rig.arch, rig.shards, rig.hyper,
        rig.settings, rig.g0, rig.trace, cb);
    eng->start(0.0);
    rig.sim.run();
    REQUIRE(eng->blends() == 3);
    CHECK(eng->rounds_completed() == 3);

    // All three satellites downloaded version 0, so blend i carries
    // staleness i. Upload order and each satellite's training-time round
    // counter (blends may land between trainings) are read off the trace
    // rather than assumed.
    std::vector<int> upload_order;
    std::map<int, int> train_round;
    for (const auto& rec : rig.trace.records()) {
        if (rec.kind == "transfer" && rec.dst == kHapId)
            upload_order.push_back(rec.src);
        if (rec.kind == "training") train_round[rec.src] = rec.round;
    }
    REQUIRE(upload_order.size() == 3);
    std::set<int> unique(upload_order.begin(), upload_order.end());
    CHECK(unique == std::set<int>{0, 1, 2});

    Eigen::VectorXd g = rig.g0.values;
    for (size_t i = 0; i < 3; ++i) {
        const int sat = upload_order[i];
        const auto u = rig.trained(sat, rig.g0, train_round.at(sat));
        const double eta = 0.5 / (1.0 + static_cast<double>(i));
        g = (1.0 - eta) * g + eta * u.values;
    }
    CHECK(max_abs_diff(eng->global_model().values, g) < 1e-12);
}

TEST_CASE("identical scenarios replay to identical traces and models") {
    auto run_once = [](std::string& jsonl, Eigen::VectorXd& global) {
        Rig rig(false, 40.0, {5, 7, 9});
        for (int k = 0; k < 3; ++k) rig.plan.set(kHapId, k, window(0.0, 1.0e6));
        rig.plan.set(0, 1, window(0.0, 1.0e6));
        rig.plan.set(1, 2, window(0.0, 1.0e6));
        rig.plan.set(2, 0, window(0.0, 1.0e6));
        protocol::EngineCallbacks cb;
        std::unique_ptr<FedProbe> eng;
        cb.on_model_updated = [&](double) {
            if (eng->rounds_completed() >= 2) rig.sim.request_stop();
        };
        eng = std::make_unique<FedProbe>(rig.sim, rig.net, rig.geom, rig.plan,
                                         rig.arch, rig.shards, rig.hyper,
                                         rig.settings, rig.g0, rig.trace, cb);
        eng->start(0.0);
        rig.sim.run();
        jsonl = rig.trace.to_jsonl();
        global = eng->global_model().values;
    };
    std::string j1, j2;
    Eigen::VectorXd g1, g2;
    run_once(j1, g1);
    run_once(j2, g2);
    CHECK(j1 == j2);
    CHECK(g1 == g2);
}

}

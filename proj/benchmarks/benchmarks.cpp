#include "leofl/data.hpp"
#include "leofl/links.hpp"
#include "leofl/network.hpp"
#include "leofl/nn.hpp"
#include "leofl/orbital.hpp"
#include "leofl/simengine.hpp"

#include <benchmark/benchmark.h>

#include <numbers>
#include <random>

namespace {

using namespace leofl;

constexpr double kDegToRad = std::numbers::pi / 180.0;

orbital::Geometry desk_geometry() {
    auto spec = orbital::make_walker_delta(5, 8, 2.0e6, 80.0 * kDegToRad,
                                           2.0 * std::numbers::pi, 0.0);
    orbital::GroundNodeSpec hap;
    hap.node_id = 9001;
    hap.kind = orbital::NodeKind::Hap;
    hap.latitude_rad = 37.951 * kDegToRad;
    hap.longitude_rad = -91.768 * kDegToRad;
    hap.altitude_m = 20'000.0;
    hap.min_elevation_rad = -5.0 * kDegToRad;
    return orbital::Geometry(std::move(spec), {hap});
}

void BM_EventQueue(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> when(0.0, 1.0e6);
    for (auto _ : state) {
        sim::Simulator simulator(2.0e6);
        long counter = 0;
        for (int i = 0; i < n; ++i) {
            simulator.schedule(when(rng), sim::EventKind::WindowOpen,
                               [&counter]() { ++counter; });
        }
        auto rr = simulator.run();
        benchmark::DoNotOptimize(rr.processed_events);
        benchmark::DoNotOptimize(counter);
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_EventQueue)->Arg(100'000);

void BM_LocalTrainEpoch(benchmark::State& state) {
    data::Dataset ds = data::synthetic_digits(600, 11);
    data::DataShard shard{0, ds.features, ds.labels};
    nn::MlpArchitecture arch{{784, 64, 10}};
    nn::ModelVector w0 = nn::glorot_init(arch, 3);
    nn::HyperParams hyper;
    hyper.rng_seed = 5;
    for (auto _ : state) {
        nn::ModelVector w = nn::local_train(w0, arch, shard, hyper);
        benchmark::DoNotOptimize(w.values.sum());
    }
    state.SetItemsProcessed(state.iterations() * shard.size());
}
BENCHMARK(BM_LocalTrainEpoch);

void BM_ContactWindowsDay(benchmark::State& state) {
    orbital::Geometry geometry = desk_geometry();
    for (auto _ : state) {
        auto windows = orbital::compute_contact_windows(geometry, 9001, 0, 0.0,
                                                        86'400.0, 10.0, 0.1);
        benchmark::DoNotOptimize(windows.size());
    }
}
BENCHMARK(BM_ContactWindowsDay);

void BM_RfSnr(benchmark::State& state) {
    links::RfLinkParams rf;
    orbital::PhysicalConstants pc;
    double d = 5.0e5;
    for (auto _ : state) {
        const double snr = links::rf_snr(rf, d, pc);
        benchmark::DoNotOptimize(links::shannon_rate_bps(snr, rf.bandwidth_hz));
        d += 1.0; // defeat constant folding
    }
}
BENCHMARK(BM_RfSnr);

void BM_EvaluateAccuracy(benchmark::State& state) {
    data::Dataset test = data::synthetic_digits(2000, 13);
    nn::MlpArchitecture arch{{784, 64, 10}};
    nn::ModelVector w = nn::glorot_init(arch, 3);
    for (auto _ : state) {
        benchmark::DoNotOptimize(nn::evaluate_accuracy(w, arch, test));
    }
    state.SetItemsProcessed(state.iterations() * test.size());
}
BENCHMARK(BM_EvaluateAccuracy);

} // namespace

BENCHMARK_MAIN();

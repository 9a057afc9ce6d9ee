#include <doctest.h>

#include "leofl/aggregate.hpp"
#include "leofl/data.hpp"
#include "leofl/errors.hpp"
#include "leofl/nn.hpp"
#include "leofl/orbital.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <vector>

using namespace leofl;

namespace {

nn::ModelVector vec2(double a, double b, const std::string& arch_id = "test") {
    nn::ModelVector m;
    m.values.resize(2);
    m.values << a, b;
    m.architecture_id = arch_id;
    return m;
}

aggregate::PartialModel seed_partial(const nn::ModelVector& local, int sat_id,
                                     std::int64_t n, int orbit) {
    aggregate::PartialModel p;
    p.model = local;
    p.covered_sat_ids = {sat_id};
    p.covered_mass = n;
    p.orbit_index = orbit;
    return p;
}

orbital::ConstellationSpec desk_constellation() {
    using std::numbers::pi;
    return orbital::make_walker_delta(5, 8, 2.0e6, 80.0 * pi / 180.0, pi,
                                      2.0 * pi / 40.0);
}

} // namespace

TEST_SUITE("learning") {

TEST_CASE("architecture bookkeeping") {
    nn::MlpArchitecture arch{{784, 16, 10}};
    CHECK(arch.parameter_count() == 12730);
    CHECK(arch.id() == "mlp-784-16-10");
    CHECK(arch.input_dim() == 784);
    CHECK(arch.num_classes() == 10);
    CHECK_THROWS_AS(nn::MlpArchitecture{{784}}.validate(), ConfigError);
    CHECK_THROWS_AS((nn::MlpArchitecture{{784, 0, 10}}.validate()), ConfigError);
}

TEST_CASE("glorot init: reproducible, bounded, zero biases") {
    nn::MlpArchitecture arch{{784, 16, 10}};
    const auto a = nn::glorot_init(arch, 7);
    const auto b = nn::glorot_init(arch, 7);
    const auto c = nn::glorot_init(arch, 8);
    CHECK(a.values == b.values);
    CHECK(a.values != c.values);
    CHECK(a.architecture_id == "mlp-784-16-10");

    const double lim1 = std::sqrt(6.0 / (784 + 16));
    const double lim2 = std::sqrt(6.0 / (16 + 10));
    for (int i = 0; i < 784 * 16; ++i) CHECK(std::abs(a.values(i)) <= lim1);
    for (int i = 0; i < 16; ++i) CHECK(a.values(784 * 16 + i) == 0.0);
    const int w2 = 784 * 16 + 16;
    for (int i = 0; i < 16 * 10; ++i) CHECK(std::abs(a.values(w2 + i)) <= lim2);
    for (int i = 0; i < 10; ++i) CHECK(a.values(w2 + 160 + i) == 0.0);
}

TEST_CASE("zero model scores uniform softmax: loss is log of class count") {
    nn::MlpArchitecture arch{{4, 3}};
    nn::ModelVector m;
    m.values = Eigen::VectorXd::Zero(arch.parameter_count());
    m.architecture_id = arch.id();
    Eigen::MatrixXd X(2, 4);
    X << 1, 2, 3, 4, -1, 0, 1, 2;
    CHECK(nn::batch_loss(m, arch, X, {0, 2}) ==
          doctest::Approx(std::log(3.0)).epsilon(1e-14));
    CHECK(nn::sample_loss(m, arch, X.row(0).transpose(), 1) ==
          doctest::Approx(std::log(3.0)).epsilon(1e-14));
}

TEST_CASE("analytic gradient agrees with central differences") {
    nn::MlpArchitecture arch{{6, 5, 4}};
    auto m = nn::glorot_init(arch, 42);
    std::mt19937_64 rng(11);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd X(8, 6);
    std::vector<int> y;
    for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 6; ++j) X(i, j) = normal(rng);
        y.push_back(i % 4);
    }
    const Eigen::VectorXd g = nn::batch_gradient(m, arch, X, y);
    const double h = 1e-5;
    for (int k = 0; k < m.values.size(); ++k) {
        nn::ModelVector p = m, q = m;
        p.values(k) += h;
        q.values(k) -= h;
        const double fd =
            (nn::batch_loss(p, arch, X, y) - nn::batch_loss(q, arch, X, y)) /
            (2.0 * h);
        CHECK(std::abs(fd - g(k)) < 1e-7 * std::max(1.0, std::abs(g(k))));
    }
}

TEST_CASE("local_train: zero learning rate is the identity") {
    nn::MlpArchitecture arch{{4, 3}};
    auto m = nn::glorot_init(arch, 1);
    data::DataShard shard;
    shard.owner_sat_id = 5;
    shard.features = Eigen::MatrixXd::Random(6, 4);
    shard.labels = {0, 1, 2, 0, 1, 2};
    nn::HyperParams hp;
    hp.learning_rate = 0.0;
    hp.local_epochs = 3;
    hp.batch_size = 2;
    const auto out = nn::local_train(m, arch, shard, hp);
    CHECK(out.values == m.values);
}

TEST_CASE("local_train: one full-batch step equals explicit gradient descent") {
    nn::MlpArchitecture arch{{4, 3}};
    auto m = nn::glorot_init(arch, 2);
    data::DataShard shard;
    shard.owner_sat_id = 1001;
    shard.features = Eigen::MatrixXd::Random(1, 4); // singleton: order-proof
    shard.labels = {2};
    nn::HyperParams hp;
    hp.learning_rate = 0.05;
    hp.local_epochs = 1;
    hp.batch_size = 8;
    const auto out = nn::local_train(m, arch, shard, hp);
    const Eigen::VectorXd expect =
        m.values - 0.05 * nn::batch_gradient(m, arch, shard.features, shard.labels);
    CHECK(out.values == expect);

    // Two epochs compose the same step twice.
    hp.local_epochs = 2;
    nn::ModelVector mid = m;
    mid.values = expect;
    const Eigen::VectorXd expect2 =
        expect -
        0.05 * nn::batch_gradient(mid, arch, shard.features, shard.labels);
    CHECK(nn::local_train(m, arch, shard, hp).values == expect2);
}

TEST_CASE("local_train is reproducible and owner-dependent") {
    nn::MlpArchitecture arch{{4, 3}};
    auto m = nn::glorot_init(arch, 3);
    data::DataShard shard;
    shard.owner_sat_id = 7;
    shard.features = Eigen::MatrixXd::Random(10, 4);
    shard.labels = {0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
    nn::HyperParams hp;
    hp.learning_rate = 0.1;
    hp.local_epochs = 2;
    hp.batch_size = 3;
    hp.rng_seed = 99;
    const auto a = nn::local_train(m, arch, shard, hp);
    const auto b = nn::local_train(m, arch, shard, hp);
    CHECK(a.values == b.values);
    data::DataShard other = shard;
    other.owner_sat_id = 8; // different batch-order stream
    CHECK(nn::local_train(m, arch, other, hp).values != a.values);
}

TEST_CASE("evaluate_accuracy on an identity network") {
    nn::MlpArchitecture arch{{2, 2}};
    nn::ModelVector m;
    m.values.resize(6);
    m.values << 1, 0, 0, 1, 0, 0; // W = I, b = 0: predicts argmax of x
    m.architecture_id = arch.id();
    data::Dataset ds;
    ds.num_classes = 2;
    ds.features.resize(4, 2);
    ds.features << 2, 1, 1, 2, 3, 0, 0, 3;
    ds.labels = {0, 1, 1, 1}; // third sample mislabeled on purpose
    CHECK(nn::evaluate_accuracy(m, arch, ds) == doctest::Approx(0.75));
}

TEST_CASE("iid partition deals equally across satellites in id order") {
    const auto spec = desk_constellation();
    const auto ds = data::synthetic_digits(207, 5);
    const auto shards = data::partition_iid(ds, spec, 17);
    REQUIRE(shards.size() == 40);
    // 207 = 40*5 + 7: the first seven shards get the extras.
    for (size_t i = 0; i < shards.size(); ++i)
        CHECK(shards[i].size() == (i < 7 ? 6 : 5));
    for (int orbit = 0; orbit < 5; ++orbit)
        for (int slot = 0; slot < 8; ++slot)
            CHECK(shards[static_cast<size_t>(orbit * 8 + slot)].owner_sat_id ==
                  orbital::make_sat_id(orbit, slot));

    // The deal is a partition: label counts are conserved.
    std::map<int, int> want, got;
    for (int l : ds.labels) ++want[l];
    int total = 0;
    for (const auto& s : shards) {
        total += s.size();
        for (int l : s.labels) ++got[l];
    }
    CHECK(total == 207);
    CHECK(want == got);

    const auto again = data::partition_iid(ds, spec, 17);
    CHECK(again[3].features == shards[3].features);
    CHECK_THROWS_AS(data::partition_iid(data::synthetic_digits(30, 1), spec, 1),
                    ConfigError);
}

TEST_CASE("noniid partition splits the class groups across orbit groups") {
    const auto spec = desk_constellation();
    const auto ds = data::synthetic_digits(400, 5);
    const auto shards = data::partition_noniid(ds, spec, 17);
    REQUIRE(shards.size() == 40);
    for (const auto& s : shards) {
        CHECK(s.size() == 10); // 240 low/24 owners, 160 high/16 owners
        const bool low_orbit = s.owner_sat_id < 3 * orbital::kSatIdStride;
        for (int l : s.labels) {
            if (low_orbit)
                CHECK(l < 6);
            else
                CHECK(l >= 6);
        }
    }
    for (size_t i = 1; i < shards.size(); ++i)
        CHECK(shards[i - 1].owner_sat_id < shards[i].owner_sat_id);
}

TEST_CASE("truncate_shards caps sizes and keeps prefixes") {
    const auto spec = desk_constellation();
    const auto ds = data::synthetic_digits(400, 5);
    auto shards = data::partition_iid(ds, spec, 1);
    const Eigen::MatrixXd head = shards[0].features.topRows(4);
    data::truncate_shards(shards, 4);
    for (const auto& s : shards) CHECK(s.size() == 4);
    CHECK(shards[0].features == head);
    CHECK_THROWS_AS(data::truncate_shards(shards, 0), ConfigError);
}

TEST_CASE("synthetic_digits: balanced, bounded, reproducible") {
    const auto ds = data::synthetic_digits(200, 123);
    CHECK(ds.size() == 200);
    CHECK(ds.feature_dim() == 784);
    CHECK(ds.num_classes == 10);
    std::map<int, int> counts;
    for (int l : ds.labels) ++counts[l];
    for (int c = 0; c < 10; ++c) CHECK(counts[c] == 20);
    CHECK(ds.features.minCoeff() > 0.0);
    CHECK(ds.features.maxCoeff() < 1.0);
    const auto again = data::synthetic_digits(200, 123);
    CHECK(again.features == ds.features);
    CHECK(again.labels == ds.labels);
    CHECK(data::synthetic_digits(200, 124).features != ds.features);
    CHECK_THROWS_AS(data::synthetic_digits(5, 1), FormatError);
}

TEST_CASE("two-gaussian stand-in") {
    const auto ds = data::synthetic_two_gaussian(10, 3, 9, 3.0);
    CHECK(ds.size() == 10);
    CHECK(ds.feature_dim() == 3);
    CHECK(ds.num_classes == 2);
    for (int i = 0; i < 10; ++i) CHECK(ds.labels[static_cast<size_t>(i)] == i % 2);
}

TEST_CASE("idx pair round-trips quantized pixel values") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path();
    const auto img_path = (dir / "leofl_test_images.idx").string();
    const auto lab_path = (dir / "leofl_test_labels.idx").string();

    data::Dataset ds;
    ds.num_classes = 10;
    ds.features.resize(6, 4);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 4; ++j)
            ds.features(i, j) = ((i * 4 + j) * 9 % 256) / 255.0;
    ds.labels = {0, 5, 9, 1, 3, 7};

    data::write_idx_pair(ds, 2, 2, img_path, lab_path);
    const auto back = data::ingest_mnist_idx(img_path, lab_path);
    CHECK(back.size() == 6);
    CHECK(back.feature_dim() == 4);
    CHECK(back.labels == ds.labels);
    CHECK(back.features == ds.features); // inputs were exact k/255 multiples

    // Independently parse the written image header.
    std::ifstream in(img_path, std::ios::binary);
    unsigned char hdr[16];
    in.read(reinterpret_cast<char*>(hdr), 16);
    CHECK(hdr[0] == 0); CHECK(hdr[1] == 0); CHECK(hdr[2] == 8); CHECK(hdr[3] == 3);
    const auto be = [&](int o) {
        return (hdr[o] << 24) | (hdr[o + 1] << 16) | (hdr[o + 2] << 8) | hdr[o + 3];
    };
    CHECK(be(4) == 6);
    CHECK(be(8) == 2);
    CHECK(be(12) == 2);

    fs::remove(img_path);
    fs::remove(lab_path);
}

TEST_CASE("idx ingestion rejects malformed input") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path();
    const auto img_path = (dir / "leofl_bad_images.idx").string();
    const auto lab_path = (dir / "leofl_bad_labels.idx").string();

    { // wrong magic
        std::ofstream img(img_path, std::ios::binary);
        const unsigned char b[16] = {0, 0, 8, 1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1};
        img.write(reinterpret_cast<const char*>(b), 16);
        std::ofstream lab(lab_path, std::ios::binary);
        const unsigned char l[8] = {0, 0, 8, 1, 0, 0, 0, 0};
        lab.write(reinterpret_cast<const char*>(l), 8);
    }
    CHECK_THROWS_WITH_AS(data::ingest_mnist_idx(img_path, lab_path),
                         doctest::Contains("bad image magic"), FormatError);

    { // truncated header
        std::ofstream img(img_path, std::ios::binary | std::ios::trunc);
        const unsigned char b[3] = {0, 0, 8};
        img.write(reinterpret_cast<const char*>(b), 3);
    }
    CHECK_THROWS_WITH_AS(data::ingest_mnist_idx(img_path, lab_path),
                         doctest::Contains("truncated header"), FormatError);

    { // count mismatch between images and labels
        data::Dataset ds;
        ds.num_classes = 10;
        ds.features = Eigen::MatrixXd::Zero(2, 1);
        ds.labels = {0, 1};
        data::write_idx_pair(ds, 1, 1, img_path, lab_path);
        std::ofstream lab(lab_path, std::ios::binary | std::ios::trunc);
        const unsigned char l[9] = {0, 0, 8, 1, 0, 0, 0, 1, 0};
        lab.write(reinterpret_cast<const char*>(l), 9);
    }
    CHECK_THROWS_AS(data::ingest_mnist_idx(img_path, lab_path), FormatError);

    fs::remove(img_path);
    fs::remove(lab_path);
}

TEST_CASE("partial_aggregate: three equal shards give 4/9, 2/9, 1/3") {
    const auto a = vec2(1.0, 0.0);
    const auto b = vec2(0.0, 1.0);
    const auto c = vec2(3.0, 5.0);
    auto p = seed_partial(a, 0, 5, 0);
    p = aggregate::partial_aggregate(p, b, 2, 5, 15);
    p = aggregate::partial_aggregate(p, c, 1, 5, 15);
    CHECK(p.model.values(0) ==
          doctest::Approx(4.0 / 9.0 * 1.0 + 1.0 / 3.0 * 3.0).epsilon(1e-15));
    CHECK(p.model.values(1) ==
          doctest::Approx(2.0 / 9.0 * 1.0 + 1.0 / 3.0 * 5.0).epsilon(1e-15));
    CHECK(p.covered_sat_ids == std::vector<int>{0, 2, 1});
    CHECK(p.covered_mass == 15);
    CHECK(p.covers(2));
    CHECK_FALSE(p.covers(3));
}

TEST_CASE("partial_aggregate: short chain in a large orbit") {
    // Three of eight unit shards: 49/64, 7/64, 8/64.
    auto p = seed_partial(vec2(1, 0), 0, 1, 0);
    p = aggregate::partial_aggregate(p, vec2(0, 1), 1, 1, 8);
    p = aggregate::partial_aggregate(p, vec2(0, 0), 2, 1, 8);
    CHECK(p.model.values(0) == doctest::Approx(49.0 / 64.0).epsilon(1e-15));
    CHECK(p.model.values(1) == doctest::Approx(7.0 / 64.0).epsilon(1e-15));

    // Full eight-satellite walk: first coefficient decays to (7/8)^7.
    auto full = seed_partial(vec2(1, 0), 0, 1, 0);
    for (int s = 1; s < 8; ++s)
        full = aggregate::partial_aggregate(full, vec2(0, 0), s, 1, 8);
    CHECK(full.model.values(0) ==
          doctest::Approx(std::pow(7.0 / 8.0, 7)).epsilon(1e-14));
    CHECK(full.covered_mass == 8);
}

TEST_CASE("partial_aggregate rejects contract violations") {
    auto p = seed_partial(vec2(1, 0), 0, 5, 0);
    aggregate::PartialModel empty;
    empty.model = vec2(0, 0);
    CHECK_THROWS_AS(aggregate::partial_aggregate(empty, vec2(0, 1), 1, 5, 15),
                    ProtocolError);
    CHECK_THROWS_AS(aggregate::partial_aggregate(p, vec2(0, 1), 1, 0, 15),
                    ProtocolError);
    CHECK_THROWS_AS(aggregate::partial_aggregate(p, vec2(0, 1), 1, 20, 15),
                    ProtocolError);
    CHECK_THROWS_AS(aggregate::partial_aggregate(p, vec2(0, 1), 0, 5, 15),
                    ProtocolError); // satellite 0 already folded
    CHECK_THROWS_AS(
        aggregate::partial_aggregate(p, vec2(0, 1, "other"), 1, 5, 15),
        ProtocolError);
    nn::ModelVector wrong_len;
    wrong_len.values = Eigen::VectorXd::Zero(3);
    wrong_len.architecture_id = "test";
    CHECK_THROWS_AS(aggregate::partial_aggregate(p, wrong_len, 1, 5, 15),
                    ProtocolError);
}

TEST_CASE("organize_and_filter: first keeper wins, redundancy dropped") {
    aggregate::PartialCollection raw;
    auto add = [&](std::vector<int> ids, double t, std::uint64_t seq, double v) {
        aggregate::ReceivedPartial rp;
        rp.partial.model = vec2(v, 0);
        rp.partial.covered_sat_ids = std::move(ids);
        rp.partial.orbit_index = 0;
        rp.arrival_time_s = t;
        rp.arrival_seq = seq;
        raw.add(std::move(rp));
    };
    add({0, 1}, 10.0, 1, 1.0);
    add({1}, 20.0, 2, 2.0);    // fully redundant: dropped
    add({2, 1}, 30.0, 3, 3.0); // new sat 2, overlap on 1: kept

    std::map<int, std::vector<int>> rosters;
    rosters[0] = {0, 1, 2};
    rosters[1] = {1000, 1001};

    const auto f = aggregate::organize_and_filter(raw, rosters);
    REQUIRE(f.by_orbit.count(0) == 1);
    REQUIRE(f.by_orbit.at(0).size() == 2);
    CHECK(f.by_orbit.at(0)[0].unique_sat_ids == std::vector<int>{0, 1});
    CHECK(f.by_orbit.at(0)[1].unique_sat_ids == std::vector<int>{2});
    CHECK(f.by_orbit.count(1) == 0); // no partials at all for orbit 1

    REQUIRE(f.coverage.size() == 2);
    CHECK(f.coverage[0].orbit_index == 0);
    CHECK(f.coverage[0].missing_sat_ids.empty());
    CHECK(f.coverage[0].overlap_sat_ids == std::vector<int>{1});
    CHECK(f.coverage[0].dropped_redundant == 1);
    CHECK(f.coverage[1].missing_sat_ids == std::vector<int>{1000, 1001});
    CHECK_FALSE(f.complete());
    CHECK(f.missing_orbits() == std::vector<int>{1});
}

TEST_CASE("organize_and_filter orders by arrival time then sequence") {
    aggregate::PartialCollection raw;
    auto add = [&](std::vector<int> ids, double t, std::uint64_t seq) {
        aggregate::ReceivedPartial rp;
        rp.partial.model = vec2(0, 0);
        rp.partial.covered_sat_ids = std::move(ids);
        rp.partial.orbit_index = 0;
        rp.arrival_time_s = t;
        rp.arrival_seq = seq;
        raw.add(std::move(rp));
    };
    // Same timestamp: the lower sequence number is the first keeper.
    add({0}, 5.0, 9);
    add({0, 1}, 5.0, 4);
    std::map<int, std::vector<int>> rosters{{0, {0, 1}}};
    const auto f = aggregate::organize_and_filter(raw, rosters);
    REQUIRE(f.by_orbit.at(0).size() == 1);
    CHECK(f.by_orbit.at(0)[0].unique_sat_ids == std::vector<int>{0, 1});
    CHECK(f.coverage[0].dropped_redundant == 1);
    CHECK(f.complete());
}

TEST_CASE("global_aggregate weighs kept partials by first-keeper mass") {
    aggregate::PartialCollection raw;
    auto add = [&](std::vector<int> ids, double t, double v0, double v1) {
        aggregate::ReceivedPartial rp;
        rp.partial.model = vec2(v0, v1);
        rp.partial.covered_sat_ids = std::move(ids);
        rp.partial.orbit_index = 0;
        rp.arrival_time_s = t;
        raw.add(std::move(rp));
    };
    add({0, 1}, 1.0, 1.0, 0.0);
    add({2}, 2.0, 0.0, 1.0);
    std::map<int, std::vector<int>> rosters{{0, {0, 1, 2}}};
    const auto f = aggregate::organize_and_filter(raw, rosters);
    REQUIRE(f.complete());

    std::map<int, std::int64_t> masses{{0, 5}, {1, 10}, {2, 45}};
    const auto g = aggregate::global_aggregate(f, masses);
    REQUIRE(g.has_value());
    CHECK(g->values(0) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(g->values(1) == doctest::Approx(0.75).epsilon(1e-15));

    // Incomplete coverage must defer, not guess.
    std::map<int, std::vector<int>> bigger{{0, {0, 1, 2, 3}}};
    const auto f2 = aggregate::organize_and_filter(raw, bigger);
    CHECK_FALSE(aggregate::global_aggregate(f2, masses).has_value());
}

TEST_CASE("fedavg_aggregate is the data-size-weighted mean") {
    const auto a = vec2(1.0, 3.0);
    const auto b = vec2(5.0, 7.0);
    const auto out = aggregate::fedavg_aggregate({a, b}, {1, 3});
    CHECK(out.values(0) == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(out.values(1) == doctest::Approx(6.0).epsilon(1e-15));
    CHECK_THROWS_AS(aggregate::fedavg_aggregate({}, {}), ProtocolError);
    CHECK_THROWS_AS(aggregate::fedavg_aggregate({a, b}, {1}), ProtocolError);
    CHECK_THROWS_AS(aggregate::fedavg_aggregate({a, b}, {1, 0}), ProtocolError);
    CHECK_THROWS_AS(aggregate::fedavg_aggregate({a, vec2(0, 0, "other")}, {1, 1}),
                    ProtocolError);
}

TEST_CASE("async_blend discounts stale updates harmonically") {
    const auto g = vec2(1.0, 1.0);
    const auto l = vec2(3.0, 5.0);
    const auto fresh = aggregate::async_blend(g, l, 0.5, 0);
    CHECK(fresh.values(0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(fresh.values(1) == doctest::Approx(3.0).epsilon(1e-15));
    const auto stale = aggregate::async_blend(g, l, 0.5, 1);
    CHECK(stale.values(0) == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(stale.values(1) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK_THROWS_AS(aggregate::async_blend(g, l, 1.5, 0), ConfigError);
    CHECK_THROWS_AS(aggregate::async_blend(g, l, 0.5, -1), ProtocolError);
    CHECK_THROWS_AS(aggregate::async_blend(g, vec2(0, 0, "other"), 0.5, 0),
                    ProtocolError);
}

}

#include "leofl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "leofl/errors.hpp"

namespace leofl::data {

namespace {

std::vector<unsigned char> read_all_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open file: " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be_u32(const std::vector<unsigned char>& buf, size_t offset,
                          const std::string& path) {
    if (offset + 4 > buf.size())
        throw FormatError(path + ": truncated header at byte offset " +
                          std::to_string(offset) + " (file has " +
                          std::to_string(buf.size()) + " bytes)");
    return (std::uint32_t(buf[offset]) << 24) | (std::uint32_t(buf[offset + 1]) << 16) |
           (std::uint32_t(buf[offset + 2]) << 8) | std::uint32_t(buf[offset + 3]);
}

void write_be_u32(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

std::vector<int> sorted_satellite_ids(const orbital::ConstellationSpec& spec) {
    std::vector<int> ids;
    for (const auto& o : spec.orbits)
        for (int s = 0; s < o.num_satellites; ++s)
            ids.push_back(orbital::make_sat_id(o.orbit_index, s));
    std::sort(ids.begin(), ids.end());
    return ids;
}

// Deal index list `pool` (already shuffled) equally across `owners`, sizes
// differing by at most one, and materialize the shards.
std::vector<DataShard> deal(const Dataset& ds, const std::vector<int>& pool,
                            const std::vector<int>& owners) {
    std::vector<DataShard> shards;
    const int n = static_cast<int>(pool.size());
    const int k = static_cast<int>(owners.size());
    const int base = n / k;
    const int extra = n % k;
    int cursor = 0;
    for (int i = 0; i < k; ++i) {
        const int take = base + (i < extra ? 1 : 0);
        DataShard shard;
        shard.owner_sat_id = owners[static_cast<size_t>(i)];
        shard.features.resize(take, ds.feature_dim());
        shard.labels.resize(static_cast<size_t>(take));
        for (int j = 0; j < take; ++j) {
            const int src = pool[static_cast<size_t>(cursor + j)];
            shard.features.row(j) = ds.features.row(src);
            shard.labels[static_cast<size_t>(j)] = ds.labels[static_cast<size_t>(src)];
        }
        cursor += take;
        shards.push_back(std::move(shard));
    }
    return shards;
}

} // namespace

Dataset ingest_mnist_idx(const std::string& images_path,
                         const std::string& labels_path) {
    const auto img = read_all_bytes(images_path);
    const auto lab = read_all_bytes(labels_path);

    const std::uint32_t img_magic = read_be_u32(img, 0, images_path);
    if (img_magic != 0x00000803)
        throw FormatError(images_path + ": bad image magic at byte offset 0 (got 0x" +
                          [&] { char b[16]; std::snprintf(b, sizeof b, "%08x", img_magic); return std::string(b); }() +
                          ", want 0x00000803)");
    const std::uint32_t n = read_be_u32(img, 4, images_path);
    const std::uint32_t rows = read_be_u32(img, 8, images_path);
    const std::uint32_t cols = read_be_u32(img, 12, images_path);
    const size_t expect_img = 16 + size_t(n) * rows * cols;
    if (img.size() != expect_img)
        throw FormatError(images_path + ": declared " + std::to_string(expect_img) +
                          " bytes but file has " + std::to_string(img.size()) +
                          " (mismatch from byte offset " +
                          std::to_string(std::min(img.size(), expect_img)) + ")");

    const std::uint32_t lab_magic = read_be_u32(lab, 0, labels_path);
    if (lab_magic != 0x00000801)
        throw FormatError(labels_path + ": bad label magic at byte offset 0");
    const std::uint32_t nl = read_be_u32(lab, 4, labels_path);
    if (nl != n)
        throw FormatError(labels_path + ": label count " + std::to_string(nl) +
                          " does not match image count " + std::to_string(n) +
                          " (byte offset 4)");
    const size_t expect_lab = 8 + size_t(n);
    if (lab.size() != expect_lab)
        throw FormatError(labels_path + ": declared " + std::to_string(expect_lab) +
                          " bytes but file has " + std::to_string(lab.size()) +
                          " (mismatch from byte offset " +
                          std::to_string(std::min(lab.size(), expect_lab)) + ")");

    Dataset ds;
    ds.num_classes = 10;
    const int dim = static_cast<int>(rows * cols);
    ds.features.resize(static_cast<int>(n), dim);
    ds.labels.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const size_t base = 16 + size_t(i) * rows * cols;
        for (int j = 0; j < dim; ++j)
            ds.features(static_cast<int>(i), j) =
                img[base + static_cast<size_t>(j)] / 255.0;
        const unsigned char l = lab[8 + i];
        if (l > 9)
            throw FormatError(labels_path + ": label " + std::to_string(int(l)) +
                              " out of range at byte offset " + std::to_string(8 + i));
        ds.labels[i] = l;
    }
    return ds;
}

void write_idx_pair(const Dataset& ds, int rows, int cols,
                    const std::string& images_path,
                    const std::string& labels_path) {
    if (rows * cols != ds.feature_dim())
        throw FormatError("write_idx_pair: rows*cols does not match feature dim");
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab) throw FormatError("write_idx_pair: cannot open output files");
    write_be_u32(img, 0x00000803);
    write_be_u32(img, static_cast<std::uint32_t>(ds.size()));
    write_be_u32(img, static_cast<std::uint32_t>(rows));
    write_be_u32(img, static_cast<std::uint32_t>(cols));
    for (int i = 0; i < ds.size(); ++i)
        for (int j = 0; j < ds.feature_dim(); ++j) {
            const double v = std::clamp(ds.features(i, j), 0.0, 1.0);
            const unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
            img.write(reinterpret_cast<const char*>(&b), 1);
        }
    write_be_u32(lab, 0x00000801);
    write_be_u32(lab, static_cast<std::uint32_t>(ds.size()));
    for (int i = 0; i < ds.size(); ++i) {
        const unsigned char b = static_cast<unsigned char>(ds.labels[static_cast<size_t>(i)]);
        lab.write(reinterpret_cast<const char*>(&b), 1);
    }
}

Dataset synthetic_two_gaussian(int n, int dim, std::uint64_t seed,
                               double separation) {
    if (n < 2 || dim < 1)
        throw FormatError("synthetic_two_gaussian: need n >= 2 and dim >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Dataset ds;
    ds.num_classes = 2;
    ds.features.resize(n, dim);
    ds.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int label = i % 2;
        const double center = (label == 0 ? -0.5 : 0.5) * separation;
        for (int j = 0; j < dim; ++j)
            ds.features(i, j) = (j == 0 ? center : 0.0) + normal(rng);
        ds.labels[static_cast<size_t>(i)] = label;
    }
    return ds;
}

Dataset synthetic_digits(int n, std::uint64_t seed) {
    if (n < 10) throw FormatError("synthetic_digits: need n >= 10");
    constexpr int kDim = 784;
    constexpr int kClasses = 10;
    constexpr int kLatent = 6;
    // Calibration constants: class-mean spread, latent-basis scale, pixel
    // noise, and logit sharpness jointly set the Bayes error of the mixture.
    constexpr double kMeanScale = 1.35;
    constexpr double kBasisScale = 0.55;
    constexpr double kNoise = 0.85;
    constexpr double kSharpness = 1.0;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> bases;
    for (int c = 0; c < kClasses; ++c) {
        Eigen::VectorXd b(kDim);
        for (int j = 0; j < kDim; ++j) b(j) = kMeanScale * normal(rng);
        means.push_back(std::move(b));
        Eigen::MatrixXd a(kDim, kLatent);
        for (int j = 0; j < kDim; ++j)
            for (int u = 0; u < kLatent; ++u) a(j, u) = kBasisScale * normal(rng);
        bases.push_back(std::move(a));
    }

    Dataset ds;
    ds.num_classes = kClasses;
    ds.features.resize(n, kDim);
    ds.labels.resize(static_cast<size_t>(n));
    Eigen::VectorXd latent(kLatent);
    for (int i = 0; i < n; ++i) {
        const int c = i % kClasses; // balanced classes
        for (int u = 0; u < kLatent; ++u) latent(u) = normal(rng);
        Eigen::VectorXd raw = means[static_cast<size_t>(c)] +
                              bases[static_cast<size_t>(c)] * latent;
        for (int j = 0; j < kDim; ++j) {
            const double v = kSharpness * (raw(j) + kNoise * normal(rng));
            ds.features(i, j) = 1.0 / (1.0 + std::exp(-v));
        }
        ds.labels[static_cast<size_t>(i)] = c;
    }

    // Interleave rows so any prefix is class-balanced-ish but not strictly
    // periodic.
    const auto order = shuffled_indices(n, seed ^ 0x9e3779b97f4a7c15ULL);
    return subset(ds, order);
}

Dataset subset(const Dataset& ds, const std::vector<int>& indices) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.features.resize(static_cast<int>(indices.size()), ds.feature_dim());
    out.labels.resize(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        const int src = indices[i];
        if (src < 0 || src >= ds.size())
            throw FormatError("subset: index out of range");
        out.features.row(static_cast<int>(i)) = ds.features.row(src);
        out.labels[i] = ds.labels[static_cast<size_t>(src)];
    }
    return out;
}

std::vector<DataShard> partition_iid(const Dataset& ds,
                                     const orbital::ConstellationSpec& spec,
                                     std::uint64_t seed) {
    const auto owners = sorted_satellite_ids(spec);
    if (ds.size() < static_cast<int>(owners.size()))
        throw ConfigError("partition_iid: fewer samples than satellites");
    return deal(ds, shuffled_indices(ds.size(), seed), owners);
}

std::vector<DataShard> partition_noniid(const Dataset& ds,
                                        const orbital::ConstellationSpec& spec,
                                        std::uint64_t seed) {
    const int num_orbits = static_cast<int>(spec.orbits.size());
    if (num_orbits < 2)
        throw ConfigError("partition_noniid: need at least two orbits");
    if (ds.num_classes < 2)
        throw ConfigError("partition_noniid: need at least two classes");

    const int low_orbits = std::min(
        num_orbits - 1,
        static_cast<int>(std::ceil(0.6 * num_orbits)));
    const int low_classes = std::clamp(
        static_cast<int>(std::ceil(0.6 * ds.num_classes)), 1, ds.num_classes - 1);

    std::vector<int> low_pool, high_pool;
    for (int i = 0; i < ds.size(); ++i)
        (ds.labels[static_cast<size_t>(i)] < low_classes ? low_pool : high_pool)
            .push_back(i);
    if (low_pool.empty() || high_pool.empty())
        throw ConfigError("partition_noniid: a class group has no samples");

    std::vector<int> low_owners, high_owners;
    for (const auto& o : spec.orbits) {
        auto& dst = o.orbit_index < low_orbits ? low_owners : high_owners;
        for (int s = 0; s < o.num_satellites; ++s)
            dst.push_back(orbital::make_sat_id(o.orbit_index, s));
    }
    if (low_pool.size() < low_owners.size() || high_pool.size() < high_owners.size())
        throw ConfigError("partition_noniid: class budget not realizable");

    std::mt19937_64 rng(seed);
    std::shuffle(low_pool.begin(), low_pool.end(), rng);
    std::shuffle(high_pool.begin(), high_pool.end(), rng);

    auto shards = deal(ds, low_pool, low_owners);
    auto high = deal(ds, high_pool, high_owners);
    shards.insert(shards.end(), std::make_move_iterator(high.begin()),
                  std::make_move_iterator(high.end()));
    std::sort(shards.begin(), shards.end(),
              [](const DataShard& a, const DataShard& b) {
                  return a.owner_sat_id < b.owner_sat_id;
              });
    return shards;
}

void truncate_shards(std::vector<DataShard>& shards, int max_per_shard) {
    if (max_per_shard < 1)
        throw ConfigError("truncate_shards: max_per_shard must be >= 1");
    for (auto& s : shards) {
        if (s.size() <= max_per_shard) continue;
        s.features.conservativeResize(max_per_shard, Eigen::NoChange);
        s.labels.resize(static_cast<size_t>(max_per_shard));
    }
}

} // namespace leofl::data

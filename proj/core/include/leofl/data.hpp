#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "leofl/orbital.hpp"

namespace leofl::data {

struct Dataset {
    Eigen::MatrixXd features; // rows = samples
    std::vector<int> labels;
    int num_classes = 0;

    int size() const { return static_cast<int>(features.rows()); }
    int feature_dim() const { return static_cast<int>(features.cols()); }
};

struct DataShard {
    int owner_sat_id = 0;
    Eigen::MatrixXd features;
    std::vector<int> labels;

    int size() const { return static_cast<int>(features.rows()); }
};

// Standard IDX pair (big-endian magic 0x00000803 for images, 0x00000801 for
// labels). Pixels come out scaled to [0, 1]. Malformed input raises
// FormatError naming the byte offset of the violation.
Dataset ingest_mnist_idx(const std::string& images_path,
                         const std::string& labels_path);

// Serialize a dataset back to the IDX pair layout; used by round-trip tests
// and for generating small fixtures.
void write_idx_pair(const Dataset& ds, int rows, int cols,
                    const std::string& images_path,
                    const std::string& labels_path);

// Two isotropic Gaussian blobs, labels 0/1. File-free stand-in for pipeline
// tests.
Dataset synthetic_two_gaussian(int n, int dim, std::uint64_t seed,
                               double separation = 3.0);

// Ten-class 784-dimensional procedural dataset with MNIST-like shape: each
// class is a low-rank latent manifold pushed through a sigmoid, plus pixel
// noise. Difficulty is calibrated so a small MLP lands in the high-80s/90s
// rather than saturating instantly. Used whenever IDX files are not
// configured.
Dataset synthetic_digits(int n, std::uint64_t seed);

Dataset subset(const Dataset& ds, const std::vector<int>& indices);

// Shuffle and deal samples equally (+/-1) across all satellites in id order.
std::vector<DataShard> partition_iid(const Dataset& ds,
                                     const orbital::ConstellationSpec& spec,
                                     std::uint64_t seed);

// Class-partitioned split: the first ceil(0.6 L) orbits hold only the low
// class group (0..5 of 10), the remaining orbits only the high group; within
// a group the split is IID.
std::vector<DataShard> partition_noniid(const Dataset& ds,
                                        const orbital::ConstellationSpec& spec,
                                        std::uint64_t seed);

// Caps every shard at max_per_shard samples (keeps the seeded order).
void truncate_shards(std::vector<DataShard>& shards, int max_per_shard);

} // namespace leofl::data

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "leofl/data.hpp"

namespace leofl::nn {

// Fully connected feed-forward net: rectified-linear hidden layers, softmax
// output trained with cross-entropy.
struct MlpArchitecture {
    std::vector<int> layer_sizes; // >= 2 entries, e.g. {784, 64, 10}

    std::string id() const;
    std::int64_t parameter_count() const;
    int input_dim() const { return layer_sizes.front(); }
    int num_classes() const { return layer_sizes.back(); }
    void validate() const;
};

// Flat parameter vector: per layer, the weight matrix (row-major, out x in)
// followed by the bias vector.
struct ModelVector {
    Eigen::VectorXd values;
    std::string architecture_id;
};

struct HyperParams {
    double learning_rate = 0.01; // zeta
    int local_epochs = 1;        // I
    int batch_size = 32;
    std::uint64_t rng_seed = 0;
};

// Uniform init in +/- sqrt(6/(fan_in+fan_out)), biases zero.
ModelVector glorot_init(const MlpArchitecture& arch, std::uint64_t seed);

// Cross-entropy of the softmax output for one sample.
double sample_loss(const ModelVector& model, const MlpArchitecture& arch,
                   const Eigen::VectorXd& x, int label);

// Mean cross-entropy over a batch given as rows of X.
double batch_loss(const ModelVector& model, const MlpArchitecture& arch,
                  const Eigen::MatrixXd& X, const std::vector<int>& y);

double local_loss(const ModelVector& model, const MlpArchitecture& arch,
                  const data::DataShard& shard);

// Data-size-weighted objective sum_k (n_k/n) F_k(w).
double global_objective(const ModelVector& model, const MlpArchitecture& arch,
                        const std::vector<data::DataShard>& shards);

// Mean gradient of the cross-entropy over the batch, flattened in parameter
// order. Throws NumericalError if any component is non-finite.
Eigen::VectorXd batch_gradient(const ModelVector& model,
                               const MlpArchitecture& arch,
                               const Eigen::MatrixXd& X,
                               const std::vector<int>& y);

// I epochs of seeded mini-batch gradient descent over the shard. The batch
// order stream is derived from (hyper.rng_seed, shard owner), so per-shard
// calls are independent and reproducible.
ModelVector local_train(const ModelVector& model, const MlpArchitecture& arch,
                        const data::DataShard& shard, const HyperParams& hyper);

double evaluate_accuracy(const ModelVector& model, const MlpArchitecture& arch,
                         const data::Dataset& test_set);

double dataset_loss(const ModelVector& model, const MlpArchitecture& arch,
                    const data::Dataset& ds);

} // namespace leofl::nn

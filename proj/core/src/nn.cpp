#include "leofl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "leofl/errors.hpp"

namespace leofl::nn {

namespace {

using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct LayerView {
    Eigen::Map<const RowMajorMatrix> w;
    Eigen::Map<const Eigen::VectorXd> b;
};

std::vector<LayerView> unpack(const MlpArchitecture& arch,
                              const Eigen::VectorXd& values) {
    std::vector<LayerView> layers;
    const double* p = values.data();
    for (size_t i = 0; i + 1 < arch.layer_sizes.size(); ++i) {
        const int fan_in = arch.layer_sizes[i];
        const int fan_out = arch.layer_sizes[i + 1];
        layers.push_back({Eigen::Map<const RowMajorMatrix>(p, fan_out, fan_in),
                          Eigen::Map<const Eigen::VectorXd>(p + fan_out * fan_in,
                                                            fan_out)});
        p += fan_out * fan_in + fan_out;
    }
    return layers;
}

void check_model(const ModelVector& model, const MlpArchitecture& arch) {
    arch.validate();
    if (model.values.size() != arch.parameter_count())
        throw ProtocolError("model length " + std::to_string(model.values.size()) +
                            " does not match architecture " + arch.id());
    if (!model.architecture_id.empty() && model.architecture_id != arch.id())
        throw ProtocolError("model built for " + model.architecture_id +
                            " used with " + arch.id());
}

// Forward pass keeping pre-activations; returns logits.
Eigen::MatrixXd forward(const std::vector<LayerView>& layers,
                        const Eigen::MatrixXd& X,
                        std::vector<Eigen::MatrixXd>* activations) {
    Eigen::MatrixXd a = X; // rows = samples
    if (activations) activations->push_back(a);
    for (size_t i = 0; i < layers.size(); ++i) {
        Eigen::MatrixXd z =
            (a * layers[i].w.transpose()).rowwise() + layers[i].b.transpose();
        if (i + 1 < layers.size()) {
            a = z.cwiseMax(0.0); // relu
            if (activations) activations->push_back(a);
        } else {
            a = std::move(z);
        }
    }
    return a;
}

// Row-wise softmax cross-entropy; also emits softmax probabilities if asked.
double softmax_ce(const Eigen::MatrixXd& logits, const std::vector<int>& y,
                  Eigen::MatrixXd* probs) {
    const int n = static_cast<int>(logits.rows());
    if (n != static_cast<int>(y.size()))
        throw ProtocolError("softmax_ce: label count mismatch");
    double total = 0.0;
    if (probs) probs->resize(n, logits.cols());
    for (int i = 0; i < n; ++i) {
        const double m = logits.row(i).maxCoeff();
        const Eigen::ArrayXd e = (logits.row(i).array() - m).exp();
        const double sum = e.sum();
        total += std::log(sum) + m - logits(i, y[static_cast<size_t>(i)]);
        if (probs) probs->row(i) = (e / sum).matrix();
    }
    return total / n;
}

} // namespace

std::string MlpArchitecture::id() const {
    std::string s = "mlp";
    for (int l : layer_sizes) s += "-" + std::to_string(l);
    return s;
}

std::int64_t MlpArchitecture::parameter_count() const {
    std::int64_t n = 0;
    for (size_t i = 0; i + 1 < layer_sizes.size(); ++i)
        n += std::int64_t(layer_sizes[i]) * layer_sizes[i + 1] + layer_sizes[i + 1];
    return n;
}

void MlpArchitecture::validate() const {
    if (layer_sizes.size() < 2)
        throw ConfigError("MlpArchitecture: need at least input and output layers");
    for (int l : layer_sizes)
        if (l < 1) throw ConfigError("MlpArchitecture: non-positive layer size");
}

ModelVector glorot_init(const MlpArchitecture& arch, std::uint64_t seed) {
    arch.validate();
    ModelVector m;
    m.architecture_id = arch.id();
    m.values.resize(arch.parameter_count());
    std::mt19937_64 rng(splitmix64(seed));
    std::int64_t p = 0;
    for (size_t i = 0; i + 1 < arch.layer_sizes.size(); ++i) {
        const int fan_in = arch.layer_sizes[i];
        const int fan_out = arch.layer_sizes[i + 1];
        const double lim = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> u(-lim, lim);
        for (int j = 0; j < fan_in * fan_out; ++j) m.values(p++) = u(rng);
        for (int j = 0; j < fan_out; ++j) m.values(p++) = 0.0;
    }
    return m;
}

double sample_loss(const ModelVector& model, const MlpArchitecture& arch,
                   const Eigen::VectorXd& x, int label) {
    if (x.size() != arch.input_dim())
        throw ProtocolError("sample_loss: feature size mismatch");
    if (label < 0 || label >= arch.num_classes())
        throw ProtocolError("sample_loss: label out of range");
    return batch_loss(model, arch, x.transpose(), {label});
}

double batch_loss(const ModelVector& model, const MlpArchitecture& arch,
                  const Eigen::MatrixXd& X, const std::vector<int>& y) {
    check_model(model, arch);
    if (X.cols() != arch.input_dim())
        throw ProtocolError("batch_loss: feature size mismatch");
    const auto layers = unpack(arch, model.values);
    return softmax_ce(forward(layers, X, nullptr), y, nullptr);
}

double local_loss(const ModelVector& model, const MlpArchitecture& arch,
                  const data::DataShard& shard) {
    if (shard.size() == 0) throw ProtocolError("local_loss: empty shard");
    return batch_loss(model, arch, shard.features, shard.labels);
}

double global_objective(const ModelVector& model, const MlpArchitecture& arch,
                        const std::vector<data::DataShard>& shards) {
    double n = 0.0;
    for (const auto& s : shards) n += s.size();
    if (n <= 0.0) throw ProtocolError("global_objective: no data");
    double acc = 0.0;
    for (const auto& s : shards)
        acc += (s.size() / n) * local_loss(model, arch, s);
    return acc;
}

Eigen::VectorXd batch_gradient(const ModelVector& model,
                               const MlpArchitecture& arch,
                               const Eigen::MatrixXd& X,
                               const std::vector<int>& y) {
    check_model(model, arch);
    const auto layers = unpack(arch, model.values);
    const int n = static_cast<int>(X.rows());

    std::vector<Eigen::MatrixXd> activations; // a_0 = X, a_1..a_{L-1} hidden
    Eigen::MatrixXd logits = forward(layers, X, &activations);
    Eigen::MatrixXd probs;
    softmax_ce(logits, y, &probs);

    // dZ for the output layer: (softmax - onehot) / n.
    Eigen::MatrixXd dz = probs;
    for (int i = 0; i < n; ++i) dz(i, y[static_cast<size_t>(i)]) -= 1.0;
    dz /= static_cast<double>(n);

    Eigen::VectorXd grad(model.values.size());
    std::int64_t tail = grad.size();
    for (int li = static_cast<int>(layers.size()) - 1; li >= 0; --li) {
        const auto& a_in = activations[static_cast<size_t>(li)];
        const int fan_in = arch.layer_sizes[static_cast<size_t>(li)];
        const int fan_out = arch.layer_sizes[static_cast<size_t>(li) + 1];
        RowMajorMatrix dw = dz.transpose() * a_in;
        Eigen::VectorXd db = dz.colwise().sum();
        tail -= fan_out;
        grad.segment(tail, fan_out) = db;
        tail -= std::int64_t(fan_in) * fan_out;
        grad.segment(tail, std::int64_t(fan_in) * fan_out) =
            Eigen::Map<const Eigen::VectorXd>(dw.data(), dw.size());
        if (li > 0) {
            Eigen::MatrixXd da = dz * layers[static_cast<size_t>(li)].w;
            // relu mask from the stored post-activation (positive iff active)
            dz = (a_in.array() > 0.0).cast<double>() * da.array();
        }
    }
    if (!grad.allFinite())
        throw NumericalError("batch_gradient: non-finite gradient");
    return grad;
}

ModelVector local_train(const ModelVector& model, const MlpArchitecture& arch,
                        const data::DataShard& shard, const HyperParams& hyper) {
    check_model(model, arch);
    if (shard.size() == 0) throw ProtocolError("local_train: empty shard");
    if (!(hyper.learning_rate > 0.0) && hyper.learning_rate != 0.0)
        throw ConfigError("local_train: learning rate must be >= 0");
    if (hyper.local_epochs < 1 || hyper.batch_size < 1)
        throw ConfigError("local_train: epochs and batch size must be >= 1");

    ModelVector out = model;
    out.architecture_id = arch.id();
    std::mt19937_64 rng(splitmix64(hyper.rng_seed) ^
                        splitmix64(static_cast<std::uint64_t>(shard.owner_sat_id) +
                                   0x51ed2701ab219c4bULL));
    std::vector<int> order(static_cast<size_t>(shard.size()));
    std::iota(order.begin(), order.end(), 0);

    Eigen::MatrixXd bx;
    std::vector<int> by;
    for (int epoch = 0; epoch < hyper.local_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int start = 0; start < shard.size(); start += hyper.batch_size) {
            const int take = std::min(hyper.batch_size, shard.size() - start);
            bx.resize(take, shard.features.cols());
            by.resize(static_cast<size_t>(take));
            for (int i = 0; i < take; ++i) {
                const int src = order[static_cast<size_t>(start + i)];
                bx.row(i) = shard.features.row(src);
                by[static_cast<size_t>(i)] = shard.labels[static_cast<size_t>(src)];
            }
            out.values -= hyper.learning_rate * batch_gradient(out, arch, bx, by);
        }
    }
    return out;
}

double evaluate_accuracy(const ModelVector& model, const MlpArchitecture& arch,
                         const data::Dataset& test_set) {
    check_model(model, arch);
    if (test_set.size() == 0)
        throw ProtocolError("evaluate_accuracy: empty test set");
    const auto layers = unpack(arch, model.values);
    int correct = 0;
    constexpr int kChunk = 4096;
    for (int start = 0; start < test_set.size(); start += kChunk) {
        const int take = std::min(kChunk, test_set.size() - start);
        const Eigen::MatrixXd logits =
            forward(layers, test_set.features.middleRows(start, take), nullptr);
        for (int i = 0; i < take; ++i) {
            Eigen::Index best;
            logits.row(i).maxCoeff(&best);
            if (static_cast<int>(best) ==
                test_set.labels[static_cast<size_t>(start + i)])
                ++correct;
        }
    }
    return static_cast<double>(correct) / test_set.size();
}

double dataset_loss(const ModelVector& model, const MlpArchitecture& arch,
                    const data::Dataset& ds) {
    if (ds.size() == 0) throw ProtocolError("dataset_loss: empty dataset");
    return batch_loss(model, arch, ds.features, ds.labels);
}

} // namespace leofl::nn

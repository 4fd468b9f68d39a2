#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "flsim/common.hpp"
#include "flsim/data.hpp"

namespace flsim {

struct Layer {
    Eigen::MatrixXd weights;  // out x in
    Eigen::VectorXd bias;     // out
};

/// Dense feed-forward classifier parameters. The last layer is the output
/// layer with one row per class neuron; hidden layers use ReLU, the output
/// layer is linear (softmax lives in the loss).
struct ModelParams {
    std::vector<Layer> layers;

    int input_dim() const { return static_cast<int>(layers.front().weights.cols()); }
    int num_classes() const { return static_cast<int>(layers.back().weights.rows()); }
    int output_row_width() const {  // d_l + 1: weight row plus bias entry
        return static_cast<int>(layers.back().weights.cols()) + 1;
    }

    bool same_architecture(const ModelParams& other) const;
    bool all_finite() const;

    std::size_t parameter_count() const;
    Eigen::VectorXd flatten() const;
    static ModelParams unflatten(const ModelParams& archetype, const Eigen::VectorXd& v);

    /// He-initialized network with the given layer widths, e.g. {32, 64, 5}.
    static ModelParams random_init(const std::vector<int>& dims, std::uint64_t seed);
    static ModelParams zeros(const std::vector<int>& dims);
};

struct TrainConfig {
    double learning_rate = 0.03;
    double momentum = 0.5;
    int local_epochs = 3;
    int batch_size = 64;
    std::uint64_t rng_seed = 0;

    void validate() const;
};

/// Per-neuron output-layer change of one client's local model, weight row
/// concatenated with the bias entry.
struct OutputDelta {
    int client_id = -1;
    int round = 0;
    Eigen::MatrixXd rows;  // E x (d_l + 1)
};

/// Logits for a batch of inputs, one row per sample.
Eigen::MatrixXd forward(const ModelParams& params, const Eigen::MatrixXd& inputs);

/// Activations feeding the output layer (the last hidden layer's ReLU output,
/// or the raw inputs for a single-layer net), one row per sample. These are
/// the directions along which output-row weight gradients form.
Eigen::MatrixXd penultimate_activations(const ModelParams& params, const Eigen::MatrixXd& inputs);

/// Mean softmax cross-entropy of logits against 1-based labels.
double softmax_cross_entropy(const Eigen::MatrixXd& logits, const std::vector<int>& labels);

/// Analytic gradient of the mean softmax cross-entropy over (inputs, labels),
/// in the same shape as the parameters.
ModelParams loss_gradient(const ModelParams& params, const Eigen::MatrixXd& inputs,
                          const std::vector<int>& labels);

/// Local mini-batch SGD with classical momentum. Returns nullopt for an empty
/// shard (the client skips the round). Deterministic for a fixed seed.
std::optional<ModelParams> train_local(const ModelParams& global, const Dataset& shard,
                                       const TrainConfig& cfg);

OutputDelta output_layer_delta(const ModelParams& local, const ModelParams& global,
                               int client_id = -1, int round = 0);

}  // namespace flsim

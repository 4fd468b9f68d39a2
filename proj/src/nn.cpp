#include "flsim/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace flsim {

bool ModelParams::same_architecture(const ModelParams& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].weights.rows() != other.layers[i].weights.rows() ||
            layers[i].weights.cols() != other.layers[i].weights.cols())
            return false;
    }
    return true;
}

bool ModelParams::all_finite() const {
    for (const Layer& l : layers)
        if (!l.weights.allFinite() || !l.bias.allFinite()) return false;
    return true;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers) n += l.weights.size() + l.bias.size();
    return n;
}

Eigen::VectorXd ModelParams::flatten() const {
    Eigen::VectorXd v(parameter_count());
    Eigen::Index at = 0;
    for (const Layer& l : layers) {
        v.segment(at, l.weights.size()) =
            Eigen::Map<const Eigen::VectorXd>(l.weights.data(), l.weights.size());
        at += l.weights.size();
        v.segment(at, l.bias.size()) = l.bias;
        at += l.bias.size();
    }
    return v;
}

ModelParams ModelParams::unflatten(const ModelParams& archetype, const Eigen::VectorXd& v) {
    if (v.size() != static_cast<Eigen::Index>(archetype.parameter_count()))
        throw ConfigError("flattened vector length does not match architecture");
    ModelParams out = archetype;
    Eigen::Index at = 0;
    for (Layer& l : out.layers) {
        Eigen::Map<Eigen::VectorXd>(l.weights.data(), l.weights.size()) =
            v.segment(at, l.weights.size());
        at += l.weights.size();
        l.bias = v.segment(at, l.bias.size());
        at += l.bias.size();
    }
    return out;
}

ModelParams ModelParams::random_init(const std::vector<int>& dims, std::uint64_t seed) {
    if (dims.size() < 2) throw ConfigError("network needs at least input and output widths");
    Rng rng(derive_seed(seed, /*stream=*/0x1717));
    std::normal_distribution<double> gauss(0.0, 1.0);
    ModelParams params;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        Layer l;
        l.weights.resize(dims[i + 1], dims[i]);
        const bool output_layer = i + 2 == dims.size();
        // He-initialized hidden layers; damped output layer. Starting nearer
        // uniform logits, the first output-row gradients are mostly
        // class-driven instead of fighting random initial logits.
        const double scale = (output_layer ? 0.75 : 1.0) * std::sqrt(2.0 / dims[i]);
        for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weights.cols(); ++c)
                l.weights(r, c) = scale * gauss(rng);
        l.bias = Eigen::VectorXd::Zero(dims[i + 1]);
        params.layers.push_back(std::move(l));
    }
    return params;
}

ModelParams ModelParams::zeros(const std::vector<int>& dims) {
    if (dims.size() < 2) throw ConfigError("network needs at least input and output widths");
    ModelParams params;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        Layer l;
        l.weights = Eigen::MatrixXd::Zero(dims[i + 1], dims[i]);
        l.bias = Eigen::VectorXd::Zero(dims[i + 1]);
        params.layers.push_back(std::move(l));
    }
    return params;
}

void TrainConfig::validate() const {
    if (learning_rate < 0) throw ConfigError("learning rate must be non-negative");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0, 1)");
    if (local_epochs < 1) throw ConfigError("local epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
}

Eigen::MatrixXd forward(const ModelParams& params, const Eigen::MatrixXd& inputs) {
    if (inputs.cols() != params.input_dim())
        throw ConfigError("input width does not match first layer");
    Eigen::MatrixXd h = inputs;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        const Layer& l = params.layers[i];
        h = (h * l.weights.transpose()).rowwise() + l.bias.transpose();
        if (i + 1 < params.layers.size()) h = h.cwiseMax(0.0);  // ReLU on hidden layers
    }
    return h;
}

Eigen::MatrixXd penultimate_activations(const ModelParams& params,
                                        const Eigen::MatrixXd& inputs) {
    if (inputs.cols() != params.input_dim())
        throw ConfigError("input width does not match first layer");
    Eigen::MatrixXd h = inputs;
    for (std::size_t i = 0; i + 1 < params.layers.size(); ++i) {
        const Layer& l = params.layers[i];
        h = ((h * l.weights.transpose()).rowwise() + l.bias.transpose()).cwiseMax(0.0);
    }
    return h;
}

namespace {

// Row-wise softmax with max-shift for stability.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd shifted = logits.colwise() - logits.rowwise().maxCoeff();
    Eigen::MatrixXd expd = shifted.array().exp();
    return expd.array().colwise() / expd.rowwise().sum().array();
}

}  // namespace

double softmax_cross_entropy(const Eigen::MatrixXd& logits, const std::vector<int>& labels) {
    if (logits.rows() != static_cast<Eigen::Index>(labels.size()))
        throw ConfigError("logits/labels size mismatch");
    Eigen::VectorXd shift = logits.rowwise().maxCoeff();
    double loss = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        double lse = std::log((logits.row(i).array() - shift[i]).exp().sum()) + shift[i];
        loss += lse - logits(i, labels[static_cast<std::size_t>(i)] - 1);
    }
    return loss / static_cast<double>(logits.rows());
}

ModelParams loss_gradient(const ModelParams& params, const Eigen::MatrixXd& inputs,
                          const std::vector<int>& labels) {
    if (inputs.rows() != static_cast<Eigen::Index>(labels.size()))
        throw ConfigError("inputs/labels size mismatch");
    const std::size_t depth = params.layers.size();
    const double batch = static_cast<double>(inputs.rows());

    // Forward, keeping post-activation values per layer.
    std::vector<Eigen::MatrixXd> activations(depth + 1);
    activations[0] = inputs;
    for (std::size_t i = 0; i < depth; ++i) {
        const Layer& l = params.layers[i];
        Eigen::MatrixXd z =
            (activations[i] * l.weights.transpose()).rowwise() + l.bias.transpose();
        activations[i + 1] = (i + 1 < depth) ? z.cwiseMax(0.0).eval() : z;
    }

    // dL/dlogits for mean softmax cross-entropy.
    Eigen::MatrixXd grad_out = softmax_rows(activations[depth]);
    for (Eigen::Index i = 0; i < grad_out.rows(); ++i)
        grad_out(i, labels[static_cast<std::size_t>(i)] - 1) -= 1.0;
    grad_out /= batch;

    ModelParams grads = params;
    for (std::size_t i = depth; i-- > 0;) {
        grads.layers[i].weights = grad_out.transpose() * activations[i];
        grads.layers[i].bias = grad_out.colwise().sum().transpose();
        if (i > 0) {
            grad_out = grad_out * params.layers[i].weights;
            // ReLU mask from the stored post-activation values.
            grad_out = (activations[i].array() > 0.0).cast<double>() * grad_out.array();
        }
    }
    return grads;
}

std::optional<ModelParams> train_local(const ModelParams& global, const Dataset& shard,
                                       const TrainConfig& cfg) {
    cfg.validate();
    if (shard.size() == 0) return std::nullopt;
    if (shard.feature_dim() != global.input_dim())
        throw ConfigError("shard feature width does not match model");

    ModelParams model = global;
    std::vector<ModelParams> velocity(1, model);
    for (Layer& l : velocity[0].layers) {
        l.weights.setZero();
        l.bias.setZero();
    }

    Rng rng(derive_seed(cfg.rng_seed, /*stream=*/0x7EA1));
    std::vector<int> order(static_cast<std::size_t>(shard.size()));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int start = 0; start < shard.size(); start += cfg.batch_size) {
            const int count = std::min(cfg.batch_size, shard.size() - start);
            Eigen::MatrixXd batch_x(count, shard.feature_dim());
            std::vector<int> batch_y(static_cast<std::size_t>(count));
            for (int i = 0; i < count; ++i) {
                batch_x.row(i) = shard.features.row(order[static_cast<std::size_t>(start + i)]);
                batch_y[static_cast<std::size_t>(i)] =
                    shard.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])];
            }
            ModelParams grads = loss_gradient(model, batch_x, batch_y);
            for (std::size_t l = 0; l < model.layers.size(); ++l) {
                Layer& v = velocity[0].layers[l];
                v.weights = cfg.momentum * v.weights + grads.layers[l].weights;
                v.bias = cfg.momentum * v.bias + grads.layers[l].bias;
                model.layers[l].weights -= cfg.learning_rate * v.weights;
                model.layers[l].bias -= cfg.learning_rate * v.bias;
            }
        }
    }
    return model;
}

OutputDelta output_layer_delta(const ModelParams& local, const ModelParams& global,
                               int client_id, int round) {
    if (!local.same_architecture(global)) throw ConfigError("architecture mismatch in delta");
    const Layer& lo = local.layers.back();
    const Layer& gl = global.layers.back();
    OutputDelta delta;
    delta.client_id = client_id;
    delta.round = round;
    delta.rows.resize(lo.weights.rows(), lo.weights.cols() + 1);
    delta.rows.leftCols(lo.weights.cols()) = lo.weights - gl.weights;
    delta.rows.rightCols(1) = lo.bias - gl.bias;
    return delta;
}

}  // namespace flsim

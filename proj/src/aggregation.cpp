#include "flsim/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace flsim {

void AggregatorKind::validate(int cohort_size) const {
    if (type == AggregatorType::krum && cohort_size < krum_byzantine + 3)
        throw ConfigError("krum requires M >= f + 3");
    if (type == AggregatorType::tmean) {
        if (trim_count < 0) throw ConfigError("trim count must be non-negative");
        if (cohort_size <= 2 * trim_count) throw ConfigError("trimmed mean requires M > 2b");
    }
}

AggregatorType aggregator_type_from_string(const std::string& name) {
    if (name == "fedavg") return AggregatorType::fedavg;
    if (name == "krum") return AggregatorType::krum;
    if (name == "tmean") return AggregatorType::tmean;
    if (name == "median") return AggregatorType::median;
    if (name == "foolsgold") return AggregatorType::foolsgold;
    if (name == "defend") return AggregatorType::defend;
    throw ConfigError("unknown aggregator: " + name);
}

std::string to_string(AggregatorType type) {
    switch (type) {
        case AggregatorType::fedavg: return "fedavg";
        case AggregatorType::krum: return "krum";
        case AggregatorType::tmean: return "tmean";
        case AggregatorType::median: return "median";
        case AggregatorType::foolsgold: return "foolsgold";
        case AggregatorType::defend: return "defend";
    }
    return "?";
}

namespace {

void check_architectures(const std::vector<ModelParams>& models) {
    for (std::size_t i = 1; i < models.size(); ++i)
        if (!models[i].same_architecture(models[0]))
            throw ConfigError("aggregation input architectures differ");
}

}  // namespace

std::optional<ModelParams> fedavg(const std::vector<ModelParams>& models) {
    if (models.empty()) return std::nullopt;
    check_architectures(models);
    ModelParams out = models[0];
    for (std::size_t i = 1; i < models.size(); ++i) {
        for (std::size_t l = 0; l < out.layers.size(); ++l) {
            out.layers[l].weights += models[i].layers[l].weights;
            out.layers[l].bias += models[i].layers[l].bias;
        }
    }
    const double inv = 1.0 / static_cast<double>(models.size());
    for (Layer& l : out.layers) {
        l.weights *= inv;
        l.bias *= inv;
    }
    return out;
}

ModelParams krum(const std::vector<ModelParams>& models, int assumed_byzantine) {
    const int m = static_cast<int>(models.size());
    if (m < assumed_byzantine + 3) throw ConfigError("krum requires M >= f + 3");
    check_architectures(models);

    std::vector<Eigen::VectorXd> flat;
    flat.reserve(models.size());
    for (const ModelParams& p : models) flat.push_back(p.flatten());

    Eigen::MatrixXd dist2 = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j)
            dist2(i, j) = dist2(j, i) = (flat[static_cast<std::size_t>(i)] -
                                         flat[static_cast<std::size_t>(j)])
                                            .squaredNorm();

    const int neighbors = m - assumed_byzantine - 2;
    int best = 0;
    double best_score = std::numeric_limits<double>::infinity();
    for (int i = 0; i < m; ++i) {
        std::vector<double> row;
        row.reserve(static_cast<std::size_t>(m) - 1);
        for (int j = 0; j < m; ++j)
            if (j != i) row.push_back(dist2(i, j));
        std::sort(row.begin(), row.end());
        const double score =
            std::accumulate(row.begin(), row.begin() + neighbors, 0.0);
        if (score < best_score) {  // strict: ties keep the lowest index
            best_score = score;
            best = i;
        }
    }
    return models[static_cast<std::size_t>(best)];
}

ModelParams trimmed_mean(const std::vector<ModelParams>& models, int trim_count) {
    const int m = static_cast<int>(models.size());
    if (trim_count < 0) throw ConfigError("trim count must be non-negative");
    if (m <= 2 * trim_count) throw ConfigError("trimmed mean requires M > 2b");
    check_architectures(models);

    std::vector<Eigen::VectorXd> flat;
    flat.reserve(models.size());
    for (const ModelParams& p : models) flat.push_back(p.flatten());

    const Eigen::Index n = flat[0].size();
    Eigen::VectorXd out(n);
    std::vector<double> column(static_cast<std::size_t>(m));
    for (Eigen::Index c = 0; c < n; ++c) {
        for (int i = 0; i < m; ++i) column[static_cast<std::size_t>(i)] = flat[static_cast<std::size_t>(i)][c];
        std::sort(column.begin(), column.end());
        out[c] = std::accumulate(column.begin() + trim_count, column.end() - trim_count, 0.0) /
                 static_cast<double>(m - 2 * trim_count);
    }
    return ModelParams::unflatten(models[0], out);
}

ModelParams coordinate_median(const std::vector<ModelParams>& models) {
    const int m = static_cast<int>(models.size());
    if (m < 1) throw ConfigError("median needs at least one model");
    check_architectures(models);

    std::vector<Eigen::VectorXd> flat;
    flat.reserve(models.size());
    for (const ModelParams& p : models) flat.push_back(p.flatten());

    const Eigen::Index n = flat[0].size();
    Eigen::VectorXd out(n);
    std::vector<double> column(static_cast<std::size_t>(m));
    for (Eigen::Index c = 0; c < n; ++c) {
        for (int i = 0; i < m; ++i) column[static_cast<std::size_t>(i)] = flat[static_cast<std::size_t>(i)][c];
        std::sort(column.begin(), column.end());
        out[c] = (m % 2 == 1)
                     ? column[static_cast<std::size_t>(m / 2)]
                     : 0.5 * (column[static_cast<std::size_t>(m / 2 - 1)] +
                              column[static_cast<std::size_t>(m / 2)]);
    }
    return ModelParams::unflatten(models[0], out);
}

void FoolsGoldState::record(const OutputDelta& delta) {
    Eigen::Map<const Eigen::VectorXd> flat(delta.rows.data(), delta.rows.size());
    auto it = history.find(delta.client_id);
    if (it == history.end())
        history.emplace(delta.client_id, flat);
    else
        it->second += flat;
}

std::vector<double> foolsgold_weights(const FoolsGoldState& state,
                                      const std::vector<int>& client_ids) {
    const int m = static_cast<int>(client_ids.size());
    if (m == 1) return {1.0};

    std::vector<const Eigen::VectorXd*> hist;
    hist.reserve(client_ids.size());
    for (int id : client_ids) {
        auto it = state.history.find(id);
        if (it == state.history.end())
            throw ConfigError("foolsgold client has no recorded history");
        hist.push_back(&it->second);
    }

    // Pairwise cosine similarity; zero-norm histories contribute similarity 0.
    Eigen::MatrixXd cs = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) {
        for (int j = i + 1; j < m; ++j) {
            const double ni = hist[static_cast<std::size_t>(i)]->norm();
            const double nj = hist[static_cast<std::size_t>(j)]->norm();
            if (ni > 0.0 && nj > 0.0)
                cs(i, j) = cs(j, i) =
                    hist[static_cast<std::size_t>(i)]->dot(*hist[static_cast<std::size_t>(j)]) /
                    (ni * nj);
        }
    }

    Eigen::VectorXd max_cs(m);
    for (int i = 0; i < m; ++i) {
        double hi = -1.0;
        for (int j = 0; j < m; ++j)
            if (j != i) hi = std::max(hi, cs(i, j));
        max_cs[i] = hi;
    }

    // Pardoning: rescale similarities of clients with lower peak similarity.
    Eigen::MatrixXd adj = cs;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            if (j != i && max_cs[j] > 0.0 && max_cs[i] < max_cs[j])
                adj(i, j) = cs(i, j) * max_cs[i] / max_cs[j];

    std::vector<double> wv(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        double hi = 0.0;
        for (int j = 0; j < m; ++j)
            if (j != i) hi = std::max(hi, adj(i, j));
        wv[static_cast<std::size_t>(i)] = std::clamp(1.0 - hi, 0.0, 1.0);
    }

    const double top = *std::max_element(wv.begin(), wv.end());
    if (top > 0.0)
        for (double& w : wv) w /= top;

    // Logit squashing centered at 0.5, then clamp back to [0, 1].
    for (double& w : wv) {
        if (w >= 1.0) {
            w = 1.0;
        } else if (w <= 0.0) {
            w = 0.0;
        } else {
            w = std::clamp(0.5 * std::log(w / (1.0 - w)) + 0.5, 0.0, 1.0);
        }
    }
    return wv;
}

std::optional<ModelParams> weighted_average(const std::vector<ModelParams>& models,
                                            const std::vector<double>& weights) {
    if (models.size() != weights.size()) throw ConfigError("models/weights size mismatch");
    if (models.empty()) return std::nullopt;
    check_architectures(models);
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (total <= 0.0) return std::nullopt;

    ModelParams out = models[0];
    for (Layer& l : out.layers) {
        l.weights.setZero();
        l.bias.setZero();
    }
    for (std::size_t i = 0; i < models.size(); ++i) {
        const double w = weights[i] / total;
        for (std::size_t l = 0; l < out.layers.size(); ++l) {
            out.layers[l].weights += w * models[i].layers[l].weights;
            out.layers[l].bias += w * models[i].layers[l].bias;
        }
    }
    return out;
}

}  // namespace flsim

#include "flsim/defend.hpp"

#include <algorithm>
#include <array>
#include <iostream>
#include <limits>

#include "flsim/gmm.hpp"

namespace flsim {

void DefendParams::validate() const {
    if (rating_min >= rating_max) throw ConfigError("rating_min must be below rating_max");
    if (reward <= 0 || penalty <= 0) throw ConfigError("rating steps must be positive");
    if (rating_init_fraction <= 0 || rating_init_fraction > 1)
        throw ConfigError("initial rating fraction must be in (0, 1]");
    if (srec_threshold < 0 || asr_threshold < 0)
        throw ConfigError("validation thresholds must be non-negative");
}

void RatingTable::ensure(int client_id) {
    ratings.emplace(client_id, params.initial_rating());
}

MagnitudeTable compute_magnitudes(const std::vector<OutputDelta>& deltas) {
    if (deltas.empty()) throw ConfigError("no deltas to analyze");
    const Eigen::Index e_count = deltas[0].rows.rows();
    for (const OutputDelta& d : deltas)
        if (d.rows.rows() != e_count || d.rows.cols() != deltas[0].rows.cols())
            throw ConfigError("delta shapes differ across cohort");

    MagnitudeTable table;
    table.per_client.resize(static_cast<Eigen::Index>(deltas.size()), e_count);
    table.accumulated = Eigen::VectorXd::Zero(e_count);
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        table.client_ids.push_back(deltas[k].client_id);
        for (Eigen::Index l = 0; l < e_count; ++l) {
            const double norm = deltas[k].rows.row(l).norm();
            table.per_client(static_cast<Eigen::Index>(k), l) = norm;
            table.accumulated[l] += norm;
        }
    }
    return table;
}

AttackGoal identify_goal(const MagnitudeTable& table, int round) {
    const Eigen::Index e_count = table.accumulated.size();
    if (e_count < 2) throw ConfigError("need at least two output neurons");

    // Top-2 by accumulated magnitude; equal magnitudes admit the lower class
    // index first.
    int first = 0;
    for (Eigen::Index l = 1; l < e_count; ++l)
        if (table.accumulated[l] > table.accumulated[first]) first = static_cast<int>(l);
    int second = first == 0 ? 1 : 0;
    for (Eigen::Index l = 0; l < e_count; ++l) {
        if (static_cast<int>(l) == first) continue;
        if (table.accumulated[l] > table.accumulated[second]) second = static_cast<int>(l);
    }

    AttackGoal goal;
    goal.source_class = std::min(first, second) + 1;
    goal.target_class = std::max(first, second) + 1;
    goal.round = round;

    const double top2 = table.accumulated[first] + table.accumulated[second];
    const double rest = table.accumulated.sum() - top2;
    goal.confidence = rest > 0.0 ? (top2 / 2.0) / (rest / static_cast<double>(e_count - 2))
                                 : std::numeric_limits<double>::infinity();
    return goal;
}

Eigen::MatrixXd extract_features(const std::vector<OutputDelta>& deltas,
                                 const AttackGoal& goal) {
    if (deltas.empty()) throw ConfigError("no deltas to extract features from");
    const Eigen::Index e_count = deltas[0].rows.rows();
    if (goal.source_class < 1 || goal.target_class > static_cast<int>(e_count))
        throw ConfigError("attack goal outside 1..E");

    std::vector<const OutputDelta*> ordered;
    ordered.reserve(deltas.size());
    for (const OutputDelta& d : deltas) ordered.push_back(&d);
    std::sort(ordered.begin(), ordered.end(),
              [](const OutputDelta* a, const OutputDelta* b) {
                  return a->client_id < b->client_id;
              });

    const Eigen::Index width = deltas[0].rows.cols();
    Eigen::MatrixXd features(static_cast<Eigen::Index>(deltas.size()), 2 * width);
    for (std::size_t k = 0; k < ordered.size(); ++k) {
        features.row(static_cast<Eigen::Index>(k))
            << ordered[k]->rows.row(goal.source_class - 1),
            ordered[k]->rows.row(goal.target_class - 1);
    }
    return features;
}

std::vector<int> detect_poisoned(const Eigen::MatrixXd& features,
                                 const std::vector<int>& client_ids, std::uint64_t seed,
                                 bool force, const GoalReference* reference) {
    if (features.rows() != static_cast<Eigen::Index>(client_ids.size()))
        throw ConfigError("feature rows do not match client ids");
    if (features.rows() < 2) throw ConfigError("need at least two clients to cluster");

    const GmmModel model = fit_gmm(features, seed);
    if (model.degenerate) {
        std::cerr << "[defend] clustering degenerate; excluding nobody this round\n";
        return {};
    }
    const GmmAssignment labels = assign(model, features);
    const int bad = denser_cluster(model, features, labels.labels);
    if (bad < 0) {
        std::cerr << "[defend] clustering uninformative; excluding nobody this round\n";
        return {};
    }

    // With a goal reference, membership is decided per client over the whole
    // cohort rather than by the soft split alone. Each feature row is
    // [source-row delta | target-row delta], weights then bias. A flipping
    // client's target-row weights grow along the class-f' representation
    // while its source-row weights shrink along it; requiring both signs
    // rejects honest clients whose skewed shards reproduce one of them,
    // catches quiet colluders the split left on the wrong side, and
    // naturally flags nobody in attack-free rounds. The target-contrast test
    // additionally rejects honest g'-rich clients whose target row passes
    // both alignment tests only because the class representations overlap.
    if (!force && reference && reference->source.norm() > 0.0 &&
        features.cols() == 2 * (reference->source.size() + 1)) {
        const Eigen::Index w = reference->source.size();
        const Eigen::Index half = features.cols() / 2;
        const auto cosine = [&](Eigen::Index row, Eigen::Index offset,
                                const Eigen::VectorXd& ref) {
            const auto block = features.row(row).segment(offset, w);
            const double denom = block.norm() * ref.norm();
            return denom > 0.0 ? block.dot(ref) / denom : 0.0;
        };
        const bool has_target = reference->target.size() == w && reference->target.norm() > 0.0;
        std::vector<int> outliers;
        for (std::size_t k = 0; k < client_ids.size(); ++k) {
            const Eigen::Index row = static_cast<Eigen::Index>(k);
            const double toward_source = cosine(row, half, reference->source);
            if (toward_source < kReferenceAlignment) continue;
            if (cosine(row, 0, reference->source) > -kReferenceAlignment) continue;
            if (has_target &&
                toward_source - cosine(row, half, reference->target) < kTargetContrast)
                continue;
            outliers.push_back(client_ids[k]);
        }
        return outliers;
    }

    // Without a reference, precision comes from a magnitude margin: poisoned
    // rows move the attacked output rows much harder than honest drift does,
    // and without a clear gap between the clusters there is no attack signal
    // worth acting on. Abstaining protects honest clients in quiet rounds.
    std::array<double, 2> magnitude{0.0, 0.0};
    std::array<int, 2> count{0, 0};
    for (std::size_t k = 0; k < labels.labels.size(); ++k) {
        magnitude[static_cast<std::size_t>(labels.labels[k])] +=
            features.row(static_cast<Eigen::Index>(k)).norm();
        count[static_cast<std::size_t>(labels.labels[k])] += 1;
    }
    const double bad_mag =
        magnitude[static_cast<std::size_t>(bad)] / count[static_cast<std::size_t>(bad)];
    const double other_mag =
        magnitude[static_cast<std::size_t>(1 - bad)] / count[static_cast<std::size_t>(1 - bad)];
    if (!force && bad_mag < kDetectionMarginRatio * other_mag) return {};

    std::vector<int> outliers;
    for (std::size_t k = 0; k < labels.labels.size(); ++k)
        if (labels.labels[k] == bad) outliers.push_back(client_ids[k]);
    return outliers;
}

std::optional<ModelParams> filtered_aggregate(const std::vector<ModelParams>& models,
                                              const std::vector<int>& client_ids,
                                              const std::vector<int>& outliers) {
    if (models.size() != client_ids.size())
        throw ConfigError("models do not match client ids");
    std::vector<ModelParams> kept;
    for (std::size_t k = 0; k < models.size(); ++k) {
        if (std::find(outliers.begin(), outliers.end(), client_ids[k]) == outliers.end())
            kept.push_back(models[k]);
    }
    if (kept.empty()) {
        std::cerr << "[defend] every client flagged; retaining previous global model\n";
        return std::nullopt;
    }
    return fedavg(kept);
}

ValidationResult validate_global(const ModelParams& candidate, const AttackGoal& goal,
                                 const Dataset& server_val, const ValidationState& state,
                                 const DefendParams& params) {
    ValidationResult result;
    result.state = state;
    if (server_val.size() == 0) throw ConfigError("empty validation set");

    bool has_source = false;
    for (int y : server_val.labels) has_source |= (y == goal.source_class);
    if (!has_source) {
        std::cerr << "[defend] no class-" << goal.source_class
                  << " sample in validation set; accepting without a gate\n";
        result.accepted = true;
        result.skipped = true;
        return result;
    }

    const MetricSnapshot snap =
        evaluate(candidate, server_val, goal.source_class, goal.target_class);
    result.srec = snap.srec;
    result.asr = snap.asr;

    const double d_srec = *snap.srec - state.srec_old;
    const double d_asr = *snap.asr - state.asr_old;
    const bool reject =
        d_srec < -params.srec_threshold || d_asr > params.asr_threshold;
    result.accepted = !reject;
    if (result.accepted) {
        // The baseline is a ratchet over accepted rounds: once the model has
        // been good, a slow sequence of small accepted degradations can never
        // walk it back down more than one threshold.
        result.state.srec_old = std::max(result.state.srec_old, *snap.srec);
        result.state.asr_old = std::min(result.state.asr_old, *snap.asr);
    }
    return result;
}

void update_ratings(const std::vector<int>& cohort, const std::vector<int>& outliers,
                    RatingTable& ratings, Blacklist& blacklist) {
    for (int id : cohort) {
        ratings.ensure(id);
        double& r = ratings.ratings.at(id);
        const bool flagged =
            std::find(outliers.begin(), outliers.end(), id) != outliers.end();
        if (flagged)
            r = std::max(r - ratings.params.penalty, ratings.params.rating_min);
        else
            r = std::min(r + ratings.params.reward, ratings.params.rating_max);
        // Rounding in repeated decimal steps can leave r a few ulps above the
        // floor; snap those to the floor so the blacklist threshold fires.
        if (r - ratings.params.rating_min <= 1e-9) {
            r = ratings.params.rating_min;
            blacklist.members.insert(id);
        }
    }
}

}  // namespace flsim

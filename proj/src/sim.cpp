#include "flsim/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <numeric>

namespace flsim {

namespace {

// Substream ids under the master seed.
enum Stream : std::uint64_t {
    kStreamInit = 1,
    kStreamMalicious = 2,
    kStreamSelection = 3,
    kStreamTraining = 4,
};

}  // namespace

void SimConfig::validate() const {
    if (rounds < 1) throw ConfigError("need at least one round");
    if (cohort_size < 1 || cohort_size > num_clients) throw ConfigError("need 1 <= M <= K");
    if (num_malicious < 0 || 2 * num_malicious > num_clients)
        throw ConfigError("need P <= K/2");
    if (hidden_sizes.empty()) throw ConfigError("need at least one hidden layer");
    task.validate();
    train.validate();
    defend.validate();
    aggregator.validate(cohort_size);
    attack.validate(task.num_classes());
    if (eval_source < 1 || eval_target < 1 || eval_source > task.num_classes() ||
        eval_target > task.num_classes() || eval_source == eval_target)
        throw ConfigError("evaluation pair outside 1..E");
}

std::vector<int> select_clients(int num_clients, const Blacklist& blacklist, int cohort_size,
                                Rng& rng) {
    std::vector<int> eligible;
    for (int id = 0; id < num_clients; ++id)
        if (!blacklist.contains(id)) eligible.push_back(id);
    if (eligible.empty()) throw ConfigError("every client is blacklisted");

    const int take = std::min<int>(cohort_size, static_cast<int>(eligible.size()));
    // Partial Fisher-Yates, then ascending ids for a fixed processing order.
    for (int i = 0; i < take; ++i) {
        std::uniform_int_distribution<int> pick(i, static_cast<int>(eligible.size()) - 1);
        std::swap(eligible[static_cast<std::size_t>(i)],
                  eligible[static_cast<std::size_t>(pick(rng))]);
    }
    std::vector<int> cohort(eligible.begin(), eligible.begin() + take);
    std::sort(cohort.begin(), cohort.end());
    return cohort;
}

Simulation::Simulation(const SimConfig& config) : config_(config) {
    config_.validate();
    task_ = generate_task(config_.task);
    shards_ = dirichlet_partition(task_.train, config_.num_clients, config_.dirichlet_alpha,
                                  derive_seed(config_.master_seed, kStreamInit, 1));

    Rng mal_rng(derive_seed(config_.master_seed, kStreamMalicious));
    std::vector<int> ids(static_cast<std::size_t>(config_.num_clients));
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), mal_rng);
    malicious_ids_.assign(ids.begin(), ids.begin() + config_.num_malicious);
    std::sort(malicious_ids_.begin(), malicious_ids_.end());

    std::vector<int> dims;
    dims.push_back(config_.task.feature_dim());
    for (int h : config_.hidden_sizes) dims.push_back(h);
    dims.push_back(config_.task.num_classes());
    global_ = ModelParams::random_init(dims, derive_seed(config_.master_seed, kStreamInit, 2));
    previous_global_ = global_;

    ratings_.params = config_.defend;
    for (int id = 0; id < config_.num_clients; ++id) ratings_.ensure(id);
}

std::vector<ModelParams> Simulation::collect_local_models(const std::vector<int>& cohort,
                                                          std::vector<int>& trained_ids,
                                                          int round) {
    std::vector<ModelParams> locals;
    for (int id : cohort) {
        const bool malicious = std::binary_search(malicious_ids_.begin(),
                                                  malicious_ids_.end(), id);
        Dataset shard = malicious ? apply_tlfa(shards_[static_cast<std::size_t>(id)],
                                               config_.attack, round)
                                  : shards_[static_cast<std::size_t>(id)];
        TrainConfig cfg = config_.train;
        cfg.rng_seed = derive_seed(config_.master_seed, kStreamTraining,
                                   (static_cast<std::uint64_t>(round) << 32) |
                                       static_cast<std::uint64_t>(id));
        std::optional<ModelParams> local = train_local(global_, shard, cfg);
        if (!local) continue;  // empty shard: the client sits this round out
        locals.push_back(std::move(*local));
        trained_ids.push_back(id);
    }
    return locals;
}

RoundLog Simulation::run_round() {
    const int t = ++round_;
    RoundLog log;
    log.round = t;

    Rng select_rng(derive_seed(config_.master_seed, kStreamSelection, static_cast<std::uint64_t>(t)));
    log.cohort = select_clients(config_.num_clients, blacklist_, config_.cohort_size, select_rng);

    std::vector<int> trained_ids;
    std::vector<ModelParams> locals = collect_local_models(log.cohort, trained_ids, t);

    previous_global_ = global_;
    std::optional<ModelParams> candidate;

    switch (config_.aggregator.type) {
        case AggregatorType::fedavg:
            candidate = fedavg(locals);
            break;
        case AggregatorType::krum:
            candidate = locals.empty()
                            ? std::nullopt
                            : std::optional<ModelParams>(
                                  krum(locals, config_.aggregator.krum_byzantine));
            break;
        case AggregatorType::tmean:
            candidate = locals.empty()
                            ? std::nullopt
                            : std::optional<ModelParams>(
                                  trimmed_mean(locals, config_.aggregator.trim_count));
            break;
        case AggregatorType::median:
            candidate = locals.empty()
                            ? std::nullopt
                            : std::optional<ModelParams>(coordinate_median(locals));
            break;
        case AggregatorType::foolsgold: {
            if (!locals.empty()) {
                for (std::size_t k = 0; k < locals.size(); ++k)
                    foolsgold_.record(
                        output_layer_delta(locals[k], global_, trained_ids[k], t));
                candidate =
                    weighted_average(locals, foolsgold_weights(foolsgold_, trained_ids));
            }
            break;
        }
        case AggregatorType::defend: {
            if (locals.size() < 2) break;  // nothing to cluster; skip the round
            std::vector<OutputDelta> deltas;
            deltas.reserve(locals.size());
            for (std::size_t k = 0; k < locals.size(); ++k)
                deltas.push_back(output_layer_delta(locals[k], global_, trained_ids[k], t));

            const auto started = std::chrono::steady_clock::now();
            const MagnitudeTable table = compute_magnitudes(deltas);
            const AttackGoal goal = identify_goal(table, t);
            if (std::getenv("FLSIM_DEBUG")) {
                const Dataset& val = task_.server_val;
                Eigen::MatrixXd acts = penultimate_activations(global_, val.features);
                Eigen::VectorXd hf = Eigen::VectorXd::Zero(acts.cols());
                Eigen::VectorXd hg = Eigen::VectorXd::Zero(acts.cols());
                int nf = 0, ng = 0;
                for (int i = 0; i < val.size(); ++i) {
                    if (val.labels[static_cast<std::size_t>(i)] == goal.source_class) {
                        hf += acts.row(i);
                        ++nf;
                    }
                    if (val.labels[static_cast<std::size_t>(i)] == goal.target_class) {
                        hg += acts.row(i);
                        ++ng;
                    }
                }
                const int w = global_.output_row_width() - 1;
                for (std::size_t k = 0; k < deltas.size(); ++k) {
                    const auto tgt = deltas[k].rows.row(goal.target_class - 1).head(w);
                    const auto src = deltas[k].rows.row(goal.source_class - 1).head(w);
                    auto cosv = [](const auto& a, const Eigen::VectorXd& b) {
                        double d = a.norm() * b.norm();
                        return d > 0 ? a.dot(b) / d : 0.0;
                    };
                    std::cerr << "[ref] r=" << t << " id=" << deltas[k].client_id
                              << " goal=" << goal.source_class << ">" << goal.target_class
                              << " conf=" << goal.confidence << " tf=" << cosv(tgt, hf)
                              << " tg=" << cosv(tgt, hg) << " sf=" << cosv(src, hf)
                              << " nf=" << nf << " ng=" << ng << "\n";
                }
            }
            const Eigen::MatrixXd features = extract_features(deltas, goal);
            const std::uint64_t detection_seed =
                derive_seed(config_.master_seed, kStreamSelection, 0x6A3A + t);
            // Mean hidden representations of the server's own goal-class
            // samples under the current global model: the directions an
            // f'-as-g' flip drags the goal output rows along.
            GoalReference reference;
            {
                const Dataset& val = task_.server_val;
                const Eigen::MatrixXd acts = penultimate_activations(global_, val.features);
                Eigen::VectorXd sum_f = Eigen::VectorXd::Zero(acts.cols());
                Eigen::VectorXd sum_g = Eigen::VectorXd::Zero(acts.cols());
                int n_f = 0, n_g = 0;
                for (int i = 0; i < val.size(); ++i) {
                    const int y = val.labels[static_cast<std::size_t>(i)];
                    if (y == goal.source_class) {
                        sum_f += acts.row(i);
                        ++n_f;
                    } else if (y == goal.target_class) {
                        sum_g += acts.row(i);
                        ++n_g;
                    }
                }
                if (n_f > 0) reference.source = sum_f / n_f;
                if (n_g > 0) reference.target = sum_g / n_g;
            }
            log.outliers =
                detect_poisoned(features, trained_ids, detection_seed, false,
                                reference.source.size() > 0 ? &reference : nullptr);
            // Ratings only trust flags raised under the modal goal: a real
            // attack re-elects the same pair round after round, while in
            // quiet rounds the magnitude vote wanders over noise pairs, and
            // honest clients with skewed shards would pay for that noise.
            // Exclusion from the aggregate is not gated; only ratings are.
            const int goal_count =
                ++goal_counts_[{goal.source_class, goal.target_class}];
            int max_goal_count = 0;
            for (const auto& entry : goal_counts_)
                max_goal_count = std::max(max_goal_count, entry.second);
            const bool goal_trusted = goal_count == max_goal_count && goal_count >= 3;
            const std::vector<int> rated_flags = log.outliers;
            if (goal_trusted) suspects_.insert(rated_flags.begin(), rated_flags.end());
            // Once flagged under a trusted goal, a client's updates stay out
            // of the aggregate for good: a straggling colluder below the
            // detection thresholds would otherwise drip poison back in
            // between flags. Ratings still move both ways, so the blacklist
            // only fires on repeat offenders.
            for (int id : trained_ids) {
                if (suspects_.count(id) > 0 &&
                    std::find(log.outliers.begin(), log.outliers.end(), id) ==
                        log.outliers.end())
                    log.outliers.push_back(id);
            }
            std::sort(log.outliers.begin(), log.outliers.end());
            log.detection_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
                    .count();
            log.goal = goal;
            log.features = features;

            candidate = filtered_aggregate(locals, trained_ids, log.outliers);
            if (candidate) {
                // The retained global is the last accepted model; measuring it
                // under this round's goal keeps the baseline meaningful before
                // any round has been accepted and whenever the goal shifts.
                const MetricSnapshot held = evaluate(global_, task_.server_val,
                                                     goal.source_class, goal.target_class);
                if (held.srec)
                    validation_.srec_old = std::max(validation_.srec_old, *held.srec);
                if (held.asr)
                    validation_.asr_old = std::min(validation_.asr_old, *held.asr);
                ValidationResult verdict = validate_global(
                    *candidate, goal, task_.server_val, validation_, config_.defend);
                if (!verdict.accepted) {
                    // Rejection means the aggregate carries damage the flags
                    // did not remove: either detection abstained or missed
                    // colluders, or it picked the wrong side entirely (once
                    // the global model is poisoned, honest clients are the
                    // ones pulling the attacked rows hard). Re-run the
                    // clustering unguarded and let the gate arbitrate between
                    // excluding either cluster.
                    std::vector<std::vector<int>> alternatives;
                    const auto add = [&](std::vector<int> flags) {
                        if (flags.empty() || flags.size() == trained_ids.size()) return;
                        if (flags == log.outliers) return;
                        for (const std::vector<int>& seen : alternatives)
                            if (seen == flags) return;
                        alternatives.push_back(std::move(flags));
                    };
                    const auto complement_of = [&](const std::vector<int>& basis) {
                        std::vector<int> rest;
                        for (int id : trained_ids)
                            if (std::find(basis.begin(), basis.end(), id) == basis.end())
                                rest.push_back(id);
                        return rest;
                    };
                    const std::vector<int> forced =
                        detect_poisoned(features, trained_ids, detection_seed, true);
                    add(forced);
                    add(complement_of(forced));
                    if (!log.outliers.empty()) add(complement_of(log.outliers));
                    for (std::vector<int>& retry_flags : alternatives) {
                        std::optional<ModelParams> alt =
                            filtered_aggregate(locals, trained_ids, retry_flags);
                        if (!alt) continue;
                        const ValidationResult retry = validate_global(
                            *alt, goal, task_.server_val, validation_, config_.defend);
                        if (retry.accepted) {
                            verdict = retry;
                            candidate = std::move(alt);
                            log.outliers = std::move(retry_flags);
                            break;
                        }
                    }
                }
                validation_ = verdict.state;
                log.accepted = verdict.accepted;
                if (!verdict.accepted) candidate.reset();  // roll back to omega^t
            }
            // Only the reference-rule flags move ratings: flag sets recovered
            // by the rejection cascade shape the model but are too coarse to
            // charge individual clients for. Acceptance is not required — the
            // rule stays precise even in rounds the gate rejects, where
            // honest clients repairing a damaged model push the source row
            // toward the reference and so cannot be mistaken for attackers.
            if (goal_trusted)
                update_ratings(log.cohort, rated_flags, ratings_, blacklist_);
            break;
        }
    }

    if (candidate) {
        global_ = std::move(*candidate);
    } else if (config_.aggregator.type != AggregatorType::defend || locals.size() < 2) {
        log.round_skipped = true;
    }

    log.test_metrics = evaluate(global_, task_.test, config_.eval_source, config_.eval_target);
    if (config_.aggregator.type == AggregatorType::defend) {
        log.ratings.assign(ratings_.ratings.begin(), ratings_.ratings.end());
        log.blacklist = blacklist_.members;
    }
    return log;
}

ExperimentResult Simulation::run_all() {
    ExperimentResult result;
    result.malicious_ids = malicious_ids_;
    for (int t = 0; t < config_.rounds; ++t) result.rounds.push_back(run_round());
    result.final_model = global_;
    return result;
}

ExperimentResult run_experiment(const SimConfig& config) {
    return Simulation(config).run_all();
}

}  // namespace flsim

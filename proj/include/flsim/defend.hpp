#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "flsim/aggregation.hpp"
#include "flsim/data.hpp"
#include "flsim/metrics.hpp"
#include "flsim/nn.hpp"

namespace flsim {

/// Per-client per-neuron l2 norms of output-row deltas and their per-neuron
/// sums over the cohort.
struct MagnitudeTable {
    std::vector<int> client_ids;   // cohort order (ascending id)
    Eigen::MatrixXd per_client;    // M x E
    Eigen::VectorXd accumulated;   // E
};

/// The server's per-round estimate of the attacked class pair, source < target.
/// Confidence is the mean accumulated magnitude of the two chosen neurons over
/// the mean of the remaining ones; near 1 the table is flat and the pair is
/// noise, well above 1 the two rows genuinely stick out.
struct AttackGoal {
    int source_class = 0;  // f'
    int target_class = 0;  // g'
    int round = 0;
    double confidence = 0.0;
};

struct DefendParams {
    double srec_threshold = 0.1;
    double asr_threshold = 0.1;
    double rating_min = 0.0;
    double rating_max = 1.0;
    double rating_init_fraction = 0.8;  // delta: r_k(0) = delta * (max - min)
    double reward = 0.05;               // beta
    double penalty = 0.20;              // gamma

    double initial_rating() const { return rating_init_fraction * (rating_max - rating_min); }
    void validate() const;
};

struct RatingTable {
    std::map<int, double> ratings;  // client id -> r_k
    DefendParams params;

    void ensure(int client_id);
};

struct Blacklist {
    std::set<int> members;

    bool contains(int client_id) const { return members.count(client_id) > 0; }
};

/// Running comparison baseline for the validation gate: the best source
/// recall and lowest attack success seen over accepted rounds. Initialized to
/// the worst case (no recall, total attack success) so early rounds pass.
struct ValidationState {
    double srec_old = 0.0;
    double asr_old = 1.0;
};

struct ValidationResult {
    bool accepted = false;
    bool skipped = false;  // no class-f' sample in the validation set
    ValidationState state;
    std::optional<double> srec;
    std::optional<double> asr;
};

/// Clients are only flagged when the suspect cluster's mean feature magnitude
/// exceeds the other cluster's by this factor; below it the round is treated
/// as attack-free.
constexpr double kDetectionMarginRatio = 2.0;

/// Mean penultimate-layer activations of the server's validation samples of
/// the estimated goal classes under the current global model. These are the
/// directions along which output-row weight gradients form, so they anchor
/// what a client's goal-row deltas were actually trained on.
struct GoalReference {
    Eigen::VectorXd source;  // class f' activation mean
    Eigen::VectorXd target;  // class g' activation mean (may be empty)
};

/// Flipping f-as-g drags the target row's weights toward the hidden
/// representation of class-f inputs while draining the source row away from
/// it. A client is attacker-like when its target-row weight delta makes at
/// least this cosine with the class-f' reference and its source-row weight
/// delta at most the negation. Honest clients can show one of the two signs
/// (shards poor in f' push the source row down; shards rich in g' push the
/// target row up along their own class direction), but rarely both against
/// class-f' activations.
constexpr double kReferenceAlignment = 0.55;

/// When class representations overlap, an honest client rich in g' can pass
/// both alignment tests, but its target-row delta still tracks the class-g'
/// direction more closely than class-f' (it is learning g', not relabeled
/// f'). Attackers track f' at least as closely, so the f'-minus-g' cosine
/// contrast of the target row must clear this (slightly negative) floor.
constexpr double kTargetContrast = -0.10;

MagnitudeTable compute_magnitudes(const std::vector<OutputDelta>& deltas);

/// Top-2 neurons by accumulated magnitude; the smaller class index becomes the
/// source. Magnitude ties admit the lower class index first.
AttackGoal identify_goal(const MagnitudeTable& table, int round = 0);

/// U^t: per client, the delta rows of the source and target neurons
/// concatenated (source first), rows ordered by client id.
Eigen::MatrixXd extract_features(const std::vector<OutputDelta>& deltas, const AttackGoal& goal);

/// GMM-clusters the feature rows and returns the members of the denser
/// cluster. Degenerate or uninformative clustering excludes nobody. With a
/// goal reference, membership is instead decided per client by the
/// kReferenceAlignment and kTargetContrast tests; without one, a magnitude
/// margin between the clusters guards against flagging honest drift. With
/// force set the margin guard and the refinement are skipped: callers use
/// this after the validation gate has already rejected an unfiltered
/// aggregate, which is independent evidence that the cohort carries poison.
std::vector<int> detect_poisoned(const Eigen::MatrixXd& features,
                                 const std::vector<int>& client_ids, std::uint64_t seed = 0,
                                 bool force = false, const GoalReference* reference = nullptr);

/// FedAvg over the non-outlier models; nullopt when every client is flagged
/// (the previous global model is retained).
std::optional<ModelParams> filtered_aggregate(const std::vector<ModelParams>& models,
                                              const std::vector<int>& client_ids,
                                              const std::vector<int>& outliers);

/// Metric-gated acceptance: reject when SRec degrades by more than the SRec
/// threshold or ASR rises by more than the ASR threshold, both relative to
/// the ratcheted baseline, which only advances on accepted rounds.
ValidationResult validate_global(const ModelParams& candidate, const AttackGoal& goal,
                                 const Dataset& server_val, const ValidationState& state,
                                 const DefendParams& params);

/// Rating update for the round's cohort: flagged clients lose the penalty
/// step, clean participants gain the reward step, everyone stays in
/// [rating_min, rating_max]; hitting rating_min blacklists permanently.
void update_ratings(const std::vector<int>& cohort, const std::vector<int>& outliers,
                    RatingTable& ratings, Blacklist& blacklist);

}  // namespace flsim

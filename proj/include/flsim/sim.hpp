#pragma once

#include <map>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "flsim/aggregation.hpp"
#include "flsim/data.hpp"
#include "flsim/defend.hpp"
#include "flsim/metrics.hpp"
#include "flsim/nn.hpp"

namespace flsim {

struct SimConfig {
    int num_clients = 30;      // K
    int num_malicious = 9;     // P
    int cohort_size = 10;      // M
    int rounds = 40;           // T
    double dirichlet_alpha = 1.0;
    std::vector<int> hidden_sizes{64};

    AggregatorKind aggregator;
    AttackSpec attack;
    TaskSpec task;
    TrainConfig train;
    DefendParams defend;

    // Pair used for SRec/ASR reporting; defaults to the first attack pair.
    int eval_source = 1;
    int eval_target = 2;

    std::uint64_t master_seed = 1;

    void validate() const;
};

struct RoundLog {
    int round = 0;
    std::vector<int> cohort;
    std::vector<int> outliers;
    std::optional<AttackGoal> goal;
    bool accepted = true;
    bool round_skipped = false;
    MetricSnapshot test_metrics;
    std::vector<std::pair<int, double>> ratings;  // defend only
    std::set<int> blacklist;
    Eigen::MatrixXd features;  // defend only: U^t, one row per cohort client
    double detection_seconds = 0.0;
};

struct ExperimentResult {
    ModelParams final_model;
    std::vector<RoundLog> rounds;
    std::vector<int> malicious_ids;  // planted ground truth
};

/// Uniform sample without replacement of min(M, |C - B|) non-blacklisted
/// clients. Throws ConfigError when every client is blacklisted.
std::vector<int> select_clients(int num_clients, const Blacklist& blacklist, int cohort_size,
                                Rng& rng);

/// One federated task: fixed data, fixed malicious set, round-by-round loop.
class Simulation {
public:
    explicit Simulation(const SimConfig& config);

    RoundLog run_round();
    ExperimentResult run_all();

    const ModelParams& global_model() const { return global_; }
    const std::vector<int>& malicious_ids() const { return malicious_ids_; }
    const Blacklist& blacklist() const { return blacklist_; }
    const RatingTable& ratings() const { return ratings_; }
    const TaskData& task_data() const { return task_; }
    int current_round() const { return round_; }

private:
    std::vector<ModelParams> collect_local_models(const std::vector<int>& cohort,
                                                  std::vector<int>& trained_ids, int round);

    SimConfig config_;
    TaskData task_;
    std::vector<Dataset> shards_;
    std::vector<int> malicious_ids_;
    ModelParams global_;
    ModelParams previous_global_;
    int round_ = 0;

    Blacklist blacklist_;
    RatingTable ratings_;
    ValidationState validation_;
    FoolsGoldState foolsgold_;
    // How often each class pair has won the magnitude vote, across all
    // rounds. A sustained attack keeps re-electing the same pair; in quiet
    // rounds the vote wanders over noise pairs.
    std::map<std::pair<int, int>, int> goal_counts_;
    // Clients ever flagged by the per-client rule under a trusted goal. Their
    // updates stay out of the aggregate for good, even after rating rewards
    // lift them back over the probation line.
    std::set<int> suspects_;
};

ExperimentResult run_experiment(const SimConfig& config);

}  // namespace flsim

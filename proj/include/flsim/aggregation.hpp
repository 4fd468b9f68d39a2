#pragma once

#include <map>
#include <optional>
#include <vector>

#include "flsim/nn.hpp"

namespace flsim {

enum class AggregatorType { fedavg, krum, tmean, median, foolsgold, defend };

struct AggregatorKind {
    AggregatorType type = AggregatorType::fedavg;
    int krum_byzantine = 1;  // assumed Byzantine count f for Krum
    int trim_count = 1;      // b for trimmed mean

    void validate(int cohort_size) const;
};

AggregatorType aggregator_type_from_string(const std::string& name);
std::string to_string(AggregatorType type);

/// Uniform-weight coordinatewise mean; nullopt on an empty cohort (the round
/// is skipped and the previous global model retained).
std::optional<ModelParams> fedavg(const std::vector<ModelParams>& models);

/// Returns the model minimizing the sum of squared distances to its
/// M - f - 2 nearest neighbors; ties go to the lowest index. Requires M >= f+3.
ModelParams krum(const std::vector<ModelParams>& models, int assumed_byzantine);

/// Per coordinate, drop the b smallest and b largest values and average the
/// rest. Requires M > 2b.
ModelParams trimmed_mean(const std::vector<ModelParams>& models, int trim_count);

/// Per-coordinate median; even counts average the two middle values.
ModelParams coordinate_median(const std::vector<ModelParams>& models);

/// Accumulated output-layer update history per client, fed to FoolsGold.
struct FoolsGoldState {
    std::map<int, Eigen::VectorXd> history;  // client id -> summed flattened deltas

    void record(const OutputDelta& delta);
};

/// FoolsGold per-client weights in [0, 1]: clients with mutually near-identical
/// histories are squashed toward 0, dissimilar clients toward 1.
std::vector<double> foolsgold_weights(const FoolsGoldState& state,
                                      const std::vector<int>& client_ids);

/// Weighted coordinatewise average; weights are normalized internally.
/// nullopt when all weights are zero.
std::optional<ModelParams> weighted_average(const std::vector<ModelParams>& models,
                                            const std::vector<double>& weights);

}  // namespace flsim

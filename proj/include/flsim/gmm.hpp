#pragma once

#include <Eigen/Dense>
#include <array>
#include <vector>

#include "flsim/common.hpp"

namespace flsim {

constexpr double kGmmVarianceFloor = 1e-6;

/// Two-component diagonal-covariance Gaussian mixture.
struct GmmModel {
    std::array<double, 2> weight{};           // mixing proportions, sum to 1
    std::array<Eigen::VectorXd, 2> mean{};
    std::array<Eigen::VectorXd, 2> variance{};  // diagonal, floored
    int iterations = 0;
    double log_likelihood = 0.0;
    std::vector<double> ll_history;  // per-iteration log-likelihoods
    bool degenerate = false;  // all points identical; clustering uninformative
};

struct GmmAssignment {
    std::vector<int> labels;             // argmax component per point
    Eigen::MatrixXd responsibilities;    // M x 2, rows sum to 1
};

/// EM fit. Means initialized by splitting the points at the median row norm
/// and averaging each half, so the result is deterministic; `seed` is kept
/// for interface stability.
GmmModel fit_gmm(const Eigen::MatrixXd& points, std::uint64_t seed = 0, int max_iter = 200,
                 double tol = 1e-8);

/// Posterior responsibilities and hard labels. Throws DegenerateClustering on
/// a degenerate model.
GmmAssignment assign(const GmmModel& model, const Eigen::MatrixXd& points);

/// Index of the relatively more compact component: smaller mean distance of
/// its members to the component mean, divided by the members' mean norm.
/// Tie -> smaller cluster, then component 0. Returns -1 when a cluster is
/// empty (clustering uninformative).
int denser_cluster(const GmmModel& model, const Eigen::MatrixXd& points,
                   const std::vector<int>& labels);

}  // namespace flsim

#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <vector>

#include "flsim/common.hpp"

namespace flsim {

/// Labeled feature set; labels are 1-based class ids in 1..num_classes.
struct Dataset {
    Eigen::MatrixXd features;  // n x dim
    std::vector<int> labels;   // n entries in 1..num_classes
    int num_classes = 0;

    int size() const { return static_cast<int>(labels.size()); }
    int feature_dim() const { return static_cast<int>(features.cols()); }
    void validate() const;
};

/// Class-conditional Gaussian task: one center and isotropic spread per class.
struct TaskSpec {
    Eigen::MatrixXd centers;  // E x dim
    Eigen::VectorXd spreads;  // E, all > 0
    int train_per_class = 0;
    int test_per_class = 0;
    std::uint64_t seed = 0;

    int num_classes() const { return static_cast<int>(centers.rows()); }
    int feature_dim() const { return static_cast<int>(centers.cols()); }
    void validate() const;

    /// Centers drawn uniformly on the sphere of radius center_scale.
    static TaskSpec random_blobs(int num_classes, int dim, double center_scale, double spread,
                                 int train_per_class, int test_per_class, std::uint64_t seed);
};

struct TaskData {
    Dataset train;
    Dataset server_val;  // small clean split held by the server
    Dataset test;
};

/// Three disjoint splits from the same class-conditional Gaussians; the
/// validation split is 10% of the test size.
TaskData generate_task(const TaskSpec& spec);

/// Per-class client proportions drawn from Dirichlet(alpha); every training
/// sample lands in exactly one shard.
std::vector<Dataset> dirichlet_partition(const Dataset& train, int num_clients, double alpha,
                                         std::uint64_t seed);

enum class AttackMode { none, static_pair, adaptive };

struct FlipPair {
    int source = 0;  // f
    int target = 0;  // g, with f < g
    int first_round = 1;  // inclusive active range (adaptive mode)
    int last_round = 1;
};

struct AttackSpec {
    AttackMode mode = AttackMode::none;
    std::vector<FlipPair> pairs;
    double flip_fraction = 1.0;

    void validate(int num_classes) const;
    /// The pair whose range covers `round`, or nullptr.
    const FlipPair* active_pair(int round) const;
};

/// Relabels source-class samples of the pair active at `round` to the target
/// class; features are returned bit-identical.
Dataset apply_tlfa(const Dataset& shard, const AttackSpec& spec, int round);

/// CSV with header f1..f<dim>,label.
void write_csv(const Dataset& data, std::ostream& out);

}  // namespace flsim

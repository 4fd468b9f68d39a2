#include "flsim/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace flsim {

void Dataset::validate() const {
    if (features.rows() != static_cast<Eigen::Index>(labels.size()))
        throw ConfigError("dataset feature/label count mismatch");
    if (!features.allFinite()) throw ConfigError("dataset contains non-finite features");
    for (int y : labels)
        if (y < 1 || y > num_classes) throw ConfigError("dataset label outside 1..E");
}

void TaskSpec::validate() const {
    if (num_classes() < 3) throw ConfigError("task needs at least 3 classes");
    if (centers.rows() != spreads.size()) throw ConfigError("centers/spreads size mismatch");
    if ((spreads.array() <= 0).any()) throw ConfigError("spreads must be positive");
    if (train_per_class <= 0 || test_per_class <= 0)
        throw ConfigError("samples per class must be positive");
    for (int a = 0; a < num_classes(); ++a)
        for (int b = a + 1; b < num_classes(); ++b)
            if ((centers.row(a) - centers.row(b)).norm() == 0.0)
                throw ConfigError("class centers must be pairwise distinct");
}

TaskSpec TaskSpec::random_blobs(int num_classes, int dim, double center_scale, double spread,
                                int train_per_class, int test_per_class, std::uint64_t seed) {
    TaskSpec spec;
    spec.centers.resize(num_classes, dim);
    spec.spreads = Eigen::VectorXd::Constant(num_classes, spread);
    spec.train_per_class = train_per_class;
    spec.test_per_class = test_per_class;
    spec.seed = seed;

    Rng rng(derive_seed(seed, /*stream=*/0xC0FFEE));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int e = 0; e < num_classes; ++e) {
        Eigen::VectorXd dir(dim);
        for (int j = 0; j < dim; ++j) dir[j] = gauss(rng);
        spec.centers.row(e) = center_scale * dir.transpose() / dir.norm();
    }
    return spec;
}

namespace {

Dataset sample_split(const TaskSpec& spec, int per_class, Rng& rng) {
    const int e_count = spec.num_classes();
    const int dim = spec.feature_dim();
    Dataset out;
    out.num_classes = e_count;
    out.features.resize(static_cast<Eigen::Index>(per_class) * e_count, dim);
    out.labels.reserve(static_cast<std::size_t>(per_class) * e_count);

    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::Index row = 0;
    for (int e = 0; e < e_count; ++e) {
        for (int s = 0; s < per_class; ++s, ++row) {
            for (int j = 0; j < dim; ++j)
                out.features(row, j) = spec.centers(e, j) + spec.spreads[e] * gauss(rng);
            out.labels.push_back(e + 1);
        }
    }
    return out;
}

}  // namespace

TaskData generate_task(const TaskSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, /*stream=*/0xDA7A));
    TaskData data;
    data.train = sample_split(spec, spec.train_per_class, rng);
    data.test = sample_split(spec, spec.test_per_class, rng);
    const int val_per_class = std::max(1, spec.test_per_class / 10);
    data.server_val = sample_split(spec, val_per_class, rng);
    return data;
}

std::vector<Dataset> dirichlet_partition(const Dataset& train, int num_clients, double alpha,
                                         std::uint64_t seed) {
    if (num_clients < 1) throw ConfigError("need at least one client");
    if (train.size() == 0) throw ConfigError("cannot partition an empty dataset");
    if (alpha <= 0) throw ConfigError("dirichlet alpha must be positive");

    Rng rng(derive_seed(seed, /*stream=*/0xD1E1C4));
    std::gamma_distribution<double> gamma(alpha, 1.0);

    // Per class, draw client proportions from Dirichlet(alpha) and deal the
    // class's samples out proportionally.
    std::vector<std::vector<int>> assignment(num_clients);
    for (int c = 1; c <= train.num_classes; ++c) {
        std::vector<int> idx;
        for (int i = 0; i < train.size(); ++i)
            if (train.labels[i] == c) idx.push_back(i);
        if (idx.empty()) continue;
        std::shuffle(idx.begin(), idx.end(), rng);

        Eigen::VectorXd props(num_clients);
        for (int k = 0; k < num_clients; ++k) props[k] = gamma(rng);
        props /= props.sum();

        // Cumulative cut points over the shuffled class indices.
        const int n = static_cast<int>(idx.size());
        double acc = 0.0;
        int start = 0;
        for (int k = 0; k < num_clients; ++k) {
            acc += props[k];
            int end = (k + 1 == num_clients) ? n : static_cast<int>(std::lround(acc * n));
            end = std::clamp(end, start, n);
            for (int i = start; i < end; ++i) assignment[k].push_back(idx[i]);
            start = end;
        }
    }

    std::vector<Dataset> shards(num_clients);
    for (int k = 0; k < num_clients; ++k) {
        std::sort(assignment[k].begin(), assignment[k].end());
        Dataset& shard = shards[k];
        shard.num_classes = train.num_classes;
        shard.features.resize(static_cast<Eigen::Index>(assignment[k].size()),
                              train.feature_dim());
        shard.labels.reserve(assignment[k].size());
        Eigen::Index row = 0;
        for (int i : assignment[k]) {
            shard.features.row(row++) = train.features.row(i);
            shard.labels.push_back(train.labels[i]);
        }
    }
    return shards;
}

void AttackSpec::validate(int num_classes) const {
    if (mode == AttackMode::none) return;
    if (pairs.empty()) throw ConfigError("attack spec has no flip pairs");
    if (flip_fraction <= 0.0 || flip_fraction > 1.0)
        throw ConfigError("flip fraction must be in (0, 1]");
    for (const FlipPair& p : pairs) {
        if (p.source < 1 || p.target < 1 || p.source > num_classes || p.target > num_classes)
            throw ConfigError("flip pair references class outside 1..E");
        if (p.source >= p.target)
            throw ConfigError("flip pair must have source < target");
    }
    if (mode == AttackMode::adaptive) {
        for (std::size_t a = 0; a < pairs.size(); ++a) {
            if (pairs[a].first_round > pairs[a].last_round)
                throw ConfigError("adaptive pair has empty round range");
            for (std::size_t b = a + 1; b < pairs.size(); ++b)
                if (pairs[a].first_round <= pairs[b].last_round &&
                    pairs[b].first_round <= pairs[a].last_round)
                    throw ConfigError("adaptive pair round ranges overlap");
        }
    }
}

const FlipPair* AttackSpec::active_pair(int round) const {
    switch (mode) {
        case AttackMode::none:
            return nullptr;
        case AttackMode::static_pair:
            return pairs.empty() ? nullptr : &pairs.front();
        case AttackMode::adaptive:
            for (const FlipPair& p : pairs)
                if (round >= p.first_round && round <= p.last_round) return &p;
            return nullptr;
    }
    return nullptr;
}

Dataset apply_tlfa(const Dataset& shard, const AttackSpec& spec, int round) {
    spec.validate(shard.num_classes);
    const FlipPair* pair = spec.active_pair(round);
    if (pair == nullptr) return shard;

    Dataset out = shard;
    int matches = 0;
    for (int y : shard.labels) matches += (y == pair->source);
    int to_flip = static_cast<int>(std::ceil(spec.flip_fraction * matches));
    for (std::size_t i = 0; i < out.labels.size() && to_flip > 0; ++i) {
        if (out.labels[i] == pair->source) {
            out.labels[i] = pair->target;
            --to_flip;
        }
    }
    return out;
}

void write_csv(const Dataset& data, std::ostream& out) {
    for (int j = 0; j < data.feature_dim(); ++j) out << 'f' << (j + 1) << ',';
    out << "label\n";
    for (int i = 0; i < data.size(); ++i) {
        for (int j = 0; j < data.feature_dim(); ++j) out << data.features(i, j) << ',';
        out << data.labels[i] << '\n';
    }
}

}  // namespace flsim

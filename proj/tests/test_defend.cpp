#include <doctest.h>

#include <random>

#include "flsim/defend.hpp"

using namespace flsim;

namespace {

OutputDelta make_delta(int client, const Eigen::MatrixXd& rows) {
    OutputDelta d;
    d.client_id = client;
    d.rows = rows;
    return d;
}

Eigen::MatrixXd random_rows(int e, int w, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, scale);
    Eigen::MatrixXd m(e, w);
    for (int i = 0; i < e; ++i)
        for (int j = 0; j < w; ++j) m(i, j) = gauss(rng);
    return m;
}

}  // namespace

TEST_CASE("compute_magnitudes: 3-4-5 row, zeros, and random oracle") {
    Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(2, 3);
    rows.row(0) << 3, 4, 0;
    MagnitudeTable table = compute_magnitudes({make_delta(0, rows)});
    CHECK(table.per_client(0, 0) == doctest::Approx(5.0));
    CHECK(table.per_client(0, 1) == 0.0);
    CHECK(table.accumulated[0] == doctest::Approx(5.0));

    MagnitudeTable zeros =
        compute_magnitudes({make_delta(0, Eigen::MatrixXd::Zero(3, 4)),
                            make_delta(1, Eigen::MatrixXd::Zero(3, 4))});
    CHECK(zeros.per_client.isZero(0.0));
    CHECK(zeros.accumulated.isZero(0.0));

    std::vector<OutputDelta> cohort;
    for (int k = 0; k < 5; ++k) cohort.push_back(make_delta(k, random_rows(4, 6, 50 + k)));
    MagnitudeTable random_table = compute_magnitudes(cohort);
    for (int k = 0; k < 5; ++k) {
        for (int l = 0; l < 4; ++l) {
            double acc = 0.0;
            for (int j = 0; j < 6; ++j)
                acc += cohort[static_cast<std::size_t>(k)].rows(l, j) *
                       cohort[static_cast<std::size_t>(k)].rows(l, j);
            CHECK(random_table.per_client(k, l) == doctest::Approx(std::sqrt(acc)).epsilon(1e-12));
        }
    }
    for (int l = 0; l < 4; ++l)
        CHECK(random_table.accumulated[l] ==
              doctest::Approx(random_table.per_client.col(l).sum()).epsilon(1e-12));
}

TEST_CASE("identify_goal: top-2 then ordering, ties to the lower class") {
    MagnitudeTable table;
    table.accumulated.resize(4);
    table.accumulated << 0.1, 0.9, 0.2, 0.7;
    AttackGoal goal = identify_goal(table);
    CHECK(goal.source_class == 2);
    CHECK(goal.target_class == 4);

    table.accumulated.resize(3);
    table.accumulated << 5, 5, 0;
    goal = identify_goal(table);
    CHECK(goal.source_class == 1);
    CHECK(goal.target_class == 2);
    CHECK(goal.source_class < goal.target_class);
}

TEST_CASE("extract_features: construction, identical rows, index-picking oracle") {
    Eigen::MatrixXd rows_a = random_rows(3, 3, 1);
    Eigen::MatrixXd rows_b = random_rows(3, 3, 2);
    AttackGoal goal{1, 3, 0};
    Eigen::MatrixXd features =
        extract_features({make_delta(1, rows_b), make_delta(0, rows_a)}, goal);
    REQUIRE(features.rows() == 2);
    REQUIRE(features.cols() == 6);
    // Rows ordered by client id: client 0 first despite input order.
    for (int j = 0; j < 3; ++j) {
        CHECK(features(0, j) == rows_a(0, j));       // source row of client 0
        CHECK(features(0, 3 + j) == rows_a(2, j));   // target row of client 0
        CHECK(features(1, j) == rows_b(0, j));
        CHECK(features(1, 3 + j) == rows_b(2, j));
    }

    Eigen::MatrixXd twin_features =
        extract_features({make_delta(0, rows_a), make_delta(1, rows_a)}, goal);
    CHECK((twin_features.row(0) - twin_features.row(1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("detect_poisoned: planted compact cluster is flagged") {
    Rng rng(3);
    std::normal_distribution<double> spread(0.0, 2.0);
    std::normal_distribution<double> tight(0.0, 0.05);
    Eigen::MatrixXd features(20, 6);
    std::vector<int> ids;
    for (int k = 0; k < 20; ++k) ids.push_back(k);
    for (int k = 0; k < 14; ++k) {  // benign-like spread rows, no common direction
        for (int j = 0; j < 6; ++j) features(k, j) = spread(rng);
        features.row(k).array() -= features.row(k).mean();
    }
    for (int k = 14; k < 20; ++k)  // near-identical rows around a far point
        for (int j = 0; j < 6; ++j) features(k, j) = 8.0 + tight(rng);
    std::vector<int> outliers = detect_poisoned(features, ids);
    CHECK(outliers == std::vector<int>{14, 15, 16, 17, 18, 19});
}

TEST_CASE("detect_poisoned: two identical rows are degenerate, nobody excluded") {
    Eigen::MatrixXd features = Eigen::MatrixXd::Ones(2, 4);
    CHECK(detect_poisoned(features, {0, 1}).empty());
}

TEST_CASE("detect_poisoned: coincident pair among far-apart rows is the denser cluster") {
    Eigen::MatrixXd features(5, 2);
    features << 0, 0,
                40, 0,
                0, 40,
                -60, -60,
                -60, -60;
    std::vector<int> outliers = detect_poisoned(features, {0, 1, 2, 3, 4});
    CHECK(outliers == std::vector<int>{3, 4});
}

TEST_CASE("detect_poisoned: abstains without a clear magnitude gap") {
    // Two clusters of comparable magnitude: a tight one and a loose one. The
    // tight one is denser but not larger, so nobody is flagged.
    Rng rng(8);
    std::normal_distribution<double> loose(0.0, 1.0);
    Eigen::MatrixXd features(10, 4);
    std::vector<int> ids;
    for (int k = 0; k < 10; ++k) ids.push_back(k);
    for (int k = 0; k < 5; ++k)
        for (int j = 0; j < 4; ++j) features(k, j) = 5.0 + loose(rng);
    for (int k = 5; k < 10; ++k)
        for (int j = 0; j < 4; ++j) features(k, j) = -5.0 + 0.01 * loose(rng);
    CHECK(detect_poisoned(features, ids).empty());
}

TEST_CASE("filtered_aggregate: fedavg over survivors") {
    std::vector<ModelParams> models;
    for (int k = 0; k < 4; ++k) models.push_back(ModelParams::random_init({3, 4, 3}, 60 + k));
    std::vector<int> ids = {0, 1, 2, 3};

    auto all = filtered_aggregate(models, ids, {});
    REQUIRE(all.has_value());
    CHECK((all->flatten() - fedavg(models)->flatten()).cwiseAbs().maxCoeff() == 0.0);

    auto survivor = filtered_aggregate({models[0], models[1]}, {0, 1}, {0});
    REQUIRE(survivor.has_value());
    CHECK((survivor->flatten() - models[1].flatten()).cwiseAbs().maxCoeff() == 0.0);

    auto random_subset = filtered_aggregate(models, ids, {1, 3});
    REQUIRE(random_subset.has_value());
    CHECK((random_subset->flatten() -
           fedavg({models[0], models[2]})->flatten())
              .cwiseAbs()
              .maxCoeff() < 1e-15);

    CHECK_FALSE(filtered_aggregate(models, ids, {0, 1, 2, 3}).has_value());
}

namespace {

// Validation fixture: a linear model over one-hot features predicting class i
// for feature i, with controllable per-class accuracy through the labels.
Dataset validation_set(const std::vector<int>& truth, const std::vector<int>& pred, int e) {
    Dataset d;
    d.num_classes = e;
    d.features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(truth.size()), e);
    for (std::size_t i = 0; i < pred.size(); ++i)
        d.features(static_cast<Eigen::Index>(i), pred[i] - 1) = 1.0;
    d.labels = truth;
    return d;
}

ModelParams identity_model(int e) {
    ModelParams p = ModelParams::zeros({e, e});
    p.layers[0].weights = Eigen::MatrixXd::Identity(e, e);
    return p;
}

}  // namespace

TEST_CASE("validate_global: SRec drop beyond threshold rejects") {
    // new SRec = 0.5 (5/10 correct), new ASR = 0.5.
    std::vector<int> truth(10, 1), pred;
    for (int i = 0; i < 5; ++i) pred.push_back(1);
    for (int i = 0; i < 5; ++i) pred.push_back(2);
    ValidationState state{0.70, 0.05};
    ValidationResult out = validate_global(identity_model(3), AttackGoal{1, 2, 0},
                                           validation_set(truth, pred, 3), state,
                                           DefendParams{});
    CHECK_FALSE(out.accepted);  // delta SRec = -0.20 < -0.1
    CHECK(out.state.srec_old == 0.70);  // baseline unchanged on reject
    CHECK(out.state.asr_old == 0.05);
}

TEST_CASE("validate_global: ASR rise beyond threshold rejects") {
    // new SRec = 0.7, new ASR = 0.3.
    std::vector<int> truth(10, 1), pred;
    for (int i = 0; i < 7; ++i) pred.push_back(1);
    for (int i = 0; i < 3; ++i) pred.push_back(2);
    ValidationState state{0.70, 0.05};
    ValidationResult out = validate_global(identity_model(3), AttackGoal{1, 2, 0},
                                           validation_set(truth, pred, 3), state,
                                           DefendParams{});
    CHECK_FALSE(out.accepted);  // delta ASR = 0.25 > 0.1
}

TEST_CASE("validate_global: within thresholds accepts and ratchets the baseline") {
    // new SRec = 0.72, ASR = 0.06 over 50 class-1 samples.
    std::vector<int> truth(50, 1), pred;
    for (int i = 0; i < 36; ++i) pred.push_back(1);
    for (int i = 0; i < 3; ++i) pred.push_back(2);
    for (int i = 0; i < 11; ++i) pred.push_back(3);
    ValidationState state{0.70, 0.05};
    ValidationResult out = validate_global(identity_model(3), AttackGoal{1, 2, 0},
                                           validation_set(truth, pred, 3), state,
                                           DefendParams{});
    CHECK(out.accepted);
    CHECK(out.state.srec_old == doctest::Approx(0.72));  // improved, so it advances
    CHECK(out.state.asr_old == doctest::Approx(0.05));   // 0.06 is worse, so it holds
}

TEST_CASE("validate_global: missing source class skips the gate with accept") {
    std::vector<int> truth = {2, 3};
    ValidationResult out = validate_global(identity_model(3), AttackGoal{1, 2, 0},
                                           validation_set(truth, truth, 3),
                                           ValidationState{}, DefendParams{});
    CHECK(out.accepted);
    CHECK(out.skipped);
}

TEST_CASE("update_ratings: reward, penalty, clamps, and blacklist threshold") {
    DefendParams params;
    RatingTable ratings;
    ratings.params = params;
    Blacklist blacklist;

    ratings.ratings = {{0, 0.80}, {1, 0.80}, {2, 0.98}, {3, 0.50}};
    update_ratings({0, 1, 2}, {1}, ratings, blacklist);
    CHECK(ratings.ratings[0] == doctest::Approx(0.85));  // benign participant
    CHECK(ratings.ratings[1] == doctest::Approx(0.60));  // flagged participant
    CHECK(ratings.ratings[2] == doctest::Approx(1.00));  // clamped at the top
    CHECK(ratings.ratings[3] == doctest::Approx(0.50));  // not selected: unchanged
    CHECK(blacklist.members.empty());

    // Four consecutive flags from 0.80 end in blacklisting.
    ratings.ratings[5] = params.initial_rating();
    std::vector<double> expected = {0.60, 0.40, 0.20, 0.00};
    for (std::size_t step = 0; step < expected.size(); ++step) {
        update_ratings({5}, {5}, ratings, blacklist);
        CHECK(ratings.ratings[5] == doctest::Approx(expected[step]));
    }
    CHECK(blacklist.contains(5));

    // Ratings never leave [0, 1].
    update_ratings({5}, {5}, ratings, blacklist);
    CHECK(ratings.ratings[5] == 0.0);
}

TEST_CASE("ratings: one false flag is repaid by four clean rounds, no blacklist") {
    RatingTable ratings;
    ratings.params = DefendParams{};
    Blacklist blacklist;
    ratings.ratings[0] = ratings.params.initial_rating();

    update_ratings({0}, {0}, ratings, blacklist);  // false positive
    CHECK(ratings.ratings[0] == doctest::Approx(0.60));
    for (int i = 0; i < 4; ++i) update_ratings({0}, {}, ratings, blacklist);
    CHECK(ratings.ratings[0] == doctest::Approx(0.80));
    CHECK_FALSE(blacklist.contains(0));
}

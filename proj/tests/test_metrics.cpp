#include <doctest.h>

#include <sstream>

#include "flsim/metrics.hpp"

using namespace flsim;

namespace {

// A 1-D "classifier" whose prediction equals the feature value rounded into a
// class id: weights pick the matching logit via one-hot features.
Dataset onehot_dataset(const std::vector<int>& true_labels,
                       const std::vector<int>& predicted, int num_classes) {
    Dataset d;
    d.num_classes = num_classes;
    d.features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(true_labels.size()),
                                       num_classes);
    for (std::size_t i = 0; i < predicted.size(); ++i)
        d.features(static_cast<Eigen::Index>(i), predicted[i] - 1) = 1.0;
    d.labels = true_labels;
    return d;
}

ModelParams identity_model(int num_classes) {
    ModelParams p = ModelParams::zeros({num_classes, num_classes});
    p.layers[0].weights = Eigen::MatrixXd::Identity(num_classes, num_classes);
    return p;
}

}  // namespace

TEST_CASE("evaluate: counting example [[5,5],[0,10]]") {
    std::vector<int> truth, pred;
    for (int i = 0; i < 5; ++i) { truth.push_back(1); pred.push_back(1); }
    for (int i = 0; i < 5; ++i) { truth.push_back(1); pred.push_back(2); }
    for (int i = 0; i < 10; ++i) { truth.push_back(2); pred.push_back(2); }
    MetricSnapshot snap =
        evaluate(identity_model(2), onehot_dataset(truth, pred, 2), 1, 2);
    CHECK(snap.confusion(0, 0) == 5);
    CHECK(snap.confusion(0, 1) == 5);
    CHECK(snap.confusion(1, 0) == 0);
    CHECK(snap.confusion(1, 1) == 10);
    CHECK(snap.gacc == doctest::Approx(0.75));
    CHECK(*snap.srec == doctest::Approx(0.5));
    CHECK(*snap.asr == doctest::Approx(0.5));
}

TEST_CASE("evaluate: perfect classifier") {
    std::vector<int> truth = {1, 2, 3, 1, 2, 3};
    MetricSnapshot snap = evaluate(identity_model(3), onehot_dataset(truth, truth, 3), 1, 3);
    CHECK(snap.gacc == 1.0);
    CHECK(*snap.srec == 1.0);
    CHECK(*snap.asr == 0.0);
}

TEST_CASE("evaluate: no source-class samples leaves SRec/ASR absent") {
    std::vector<int> truth = {2, 3, 2};
    MetricSnapshot snap = evaluate(identity_model(3), onehot_dataset(truth, truth, 3), 1, 3);
    CHECK_FALSE(snap.srec.has_value());
    CHECK_FALSE(snap.asr.has_value());
    CHECK(snap.gacc == 1.0);
}

TEST_CASE("evaluate: confusion entries sum to the evaluation-set size") {
    std::vector<int> truth = {1, 1, 2, 3, 3, 3};
    std::vector<int> pred = {1, 3, 2, 3, 1, 2};
    MetricSnapshot snap = evaluate(identity_model(3), onehot_dataset(truth, pred, 3), 1, 3);
    CHECK(snap.confusion.sum() == 6);
    CHECK(*snap.srec + *snap.asr <= 1.0);
}

TEST_CASE("evaluate: empty data and bad pair are errors") {
    Dataset empty;
    empty.num_classes = 3;
    empty.features.resize(0, 3);
    CHECK_THROWS_AS(evaluate(identity_model(3), empty, 1, 3), ConfigError);

    std::vector<int> truth = {1, 2};
    CHECK_THROWS_AS(evaluate(identity_model(3), onehot_dataset(truth, truth, 3), 1, 9),
                    ConfigError);
}

TEST_CASE("confusion CSV is row-major with a labeled header") {
    std::vector<int> truth = {1, 2};
    MetricSnapshot snap = evaluate(identity_model(2), onehot_dataset(truth, truth, 2), 1, 2);
    std::ostringstream out;
    write_confusion_csv(snap, out);
    CHECK(out.str() == "true_class,pred_1,pred_2\n1,1,0\n2,0,1\n");
}

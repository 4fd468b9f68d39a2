#include "flsim/metrics.hpp"

#include <ostream>

namespace flsim {

MetricSnapshot evaluate(const ModelParams& model, const Dataset& data, int source_class,
                        int target_class) {
    if (data.size() == 0) throw ConfigError("cannot evaluate on an empty dataset");
    const int e_count = data.num_classes;
    if (source_class < 1 || source_class > e_count || target_class < 1 ||
        target_class > e_count)
        throw ConfigError("metric pair outside 1..E");

    MetricSnapshot snap;
    snap.source_class = source_class;
    snap.target_class = target_class;
    snap.confusion = Eigen::MatrixXi::Zero(e_count, e_count);

    Eigen::MatrixXd logits = forward(model, data.features);
    for (int i = 0; i < data.size(); ++i) {
        Eigen::Index pred;
        logits.row(i).maxCoeff(&pred);
        snap.confusion(data.labels[static_cast<std::size_t>(i)] - 1, pred) += 1;
    }

    snap.gacc = static_cast<double>(snap.confusion.trace()) / data.size();
    const int source_total = snap.confusion.row(source_class - 1).sum();
    if (source_total > 0) {
        snap.srec = static_cast<double>(snap.confusion(source_class - 1, source_class - 1)) /
                    source_total;
        snap.asr = static_cast<double>(snap.confusion(source_class - 1, target_class - 1)) /
                   source_total;
    }
    return snap;
}

void write_confusion_csv(const MetricSnapshot& snapshot, std::ostream& out) {
    const Eigen::MatrixXi& m = snapshot.confusion;
    out << "true_class";
    for (int j = 0; j < m.cols(); ++j) out << ",pred_" << (j + 1);
    out << '\n';
    for (int i = 0; i < m.rows(); ++i) {
        out << (i + 1);
        for (int j = 0; j < m.cols(); ++j) out << ',' << m(i, j);
        out << '\n';
    }
}

}  // namespace flsim

#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <optional>

#include "flsim/data.hpp"
#include "flsim/nn.hpp"

namespace flsim {

/// Confusion matrix (rows = true class, columns = predicted, 1-based classes
/// at indices 0..E-1) plus the three attack-centric metrics for a pair (f, g).
/// SRec and ASR are absent when the evaluation set has no class-f sample.
struct MetricSnapshot {
    Eigen::MatrixXi confusion;
    double gacc = 0.0;
    std::optional<double> srec;
    std::optional<double> asr;
    int source_class = 0;
    int target_class = 0;
};

MetricSnapshot evaluate(const ModelParams& model, const Dataset& data, int source_class,
                        int target_class);

void write_confusion_csv(const MetricSnapshot& snapshot, std::ostream& out);

}  // namespace flsim

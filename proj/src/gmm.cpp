#include "flsim/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace flsim {

namespace {

constexpr double kLogTwoPi = 1.8378770664093453;

// Per-point per-component log densities under the diagonal Gaussians.
Eigen::MatrixXd log_densities(const GmmModel& model, const Eigen::MatrixXd& points) {
    const Eigen::Index m = points.rows();
    Eigen::MatrixXd out(m, 2);
    for (int c = 0; c < 2; ++c) {
        const Eigen::VectorXd& mu = model.mean[static_cast<std::size_t>(c)];
        const Eigen::VectorXd& var = model.variance[static_cast<std::size_t>(c)];
        const double log_det = var.array().log().sum();
        const double base = -0.5 * (points.cols() * kLogTwoPi + log_det);
        for (Eigen::Index i = 0; i < m; ++i) {
            double quad =
                ((points.row(i).transpose() - mu).array().square() / var.array()).sum();
            out(i, c) = base - 0.5 * quad;
        }
    }
    return out;
}

// Responsibilities plus the total log-likelihood.
double e_step(const GmmModel& model, const Eigen::MatrixXd& points, Eigen::MatrixXd& resp) {
    Eigen::MatrixXd logp = log_densities(model, points);
    logp.col(0).array() += std::log(model.weight[0]);
    logp.col(1).array() += std::log(model.weight[1]);

    double ll = 0.0;
    resp.resize(points.rows(), 2);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const double hi = logp.row(i).maxCoeff();
        const double lse = hi + std::log((logp.row(i).array() - hi).exp().sum());
        ll += lse;
        resp.row(i) = (logp.row(i).array() - lse).exp();
    }
    return ll;
}

}  // namespace

GmmModel fit_gmm(const Eigen::MatrixXd& points, std::uint64_t /*seed*/, int max_iter,
                 double tol) {
    const Eigen::Index m = points.rows();
    const Eigen::Index d = points.cols();
    if (m < 2) throw ConfigError("GMM needs at least two points");
    if (d < 1) throw ConfigError("GMM needs at least one dimension");

    GmmModel model;

    Eigen::Index best_a = 0, best_b = 1;
    double best_dist = -1.0;
    for (Eigen::Index a = 0; a < m; ++a) {
        for (Eigen::Index b = a + 1; b < m; ++b) {
            const double dist = (points.row(a) - points.row(b)).squaredNorm();
            if (dist > best_dist) {
                best_dist = dist;
                best_a = a;
                best_b = b;
            }
        }
    }
    if (best_dist == 0.0) {
        model.degenerate = true;
        model.weight = {0.5, 0.5};
        model.mean = {points.row(0).transpose(), points.row(0).transpose()};
        model.variance = {Eigen::VectorXd::Constant(d, kGmmVarianceFloor),
                          Eigen::VectorXd::Constant(d, kGmmVarianceFloor)};
        return model;
    }

    // Seed means: split the points at the median row norm and average each
    // half. The point clouds this model sees separate mostly by magnitude, and
    // this start avoids the singleton-vs-rest local optimum a most-distant
    // pair seed often falls into.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        const double na = points.row(a).norm();
        const double nb = points.row(b).norm();
        return na != nb ? na < nb : a < b;
    });
    Eigen::VectorXd mean_lo = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd mean_hi = Eigen::VectorXd::Zero(d);
    const Eigen::Index cut = m / 2;
    for (Eigen::Index i = 0; i < m; ++i) {
        if (i < cut)
            mean_lo += points.row(order[static_cast<std::size_t>(i)]).transpose();
        else
            mean_hi += points.row(order[static_cast<std::size_t>(i)]).transpose();
    }
    mean_lo /= static_cast<double>(cut);
    mean_hi /= static_cast<double>(m - cut);
    if ((mean_lo - mean_hi).squaredNorm() == 0.0) {
        // Halves that average to the same point give EM nothing to work with;
        // fall back to the most-distant pair.
        mean_lo = points.row(best_a).transpose();
        mean_hi = points.row(best_b).transpose();
    }

    Eigen::VectorXd global_var =
        (points.rowwise() - points.colwise().mean()).array().square().colwise().mean();
    global_var = global_var.cwiseMax(kGmmVarianceFloor);

    model.weight = {0.5, 0.5};
    model.mean = {mean_lo, mean_hi};
    model.variance = {global_var, global_var};

    double prev_ll = -std::numeric_limits<double>::infinity();
    Eigen::MatrixXd resp;
    for (int it = 0; it < max_iter; ++it) {
        const double ll = e_step(model, points, resp);
        model.iterations = it + 1;
        model.log_likelihood = ll;
        model.ll_history.push_back(ll);
        if (ll - prev_ll < tol && it > 0) break;
        prev_ll = ll;

        // M-step with a tiny responsibility floor so a component never dies.
        for (int c = 0; c < 2; ++c) {
            const double nc = std::max(resp.col(c).sum(), 1e-12);
            model.weight[static_cast<std::size_t>(c)] = nc / static_cast<double>(m);
            Eigen::VectorXd mu = (points.transpose() * resp.col(c)) / nc;
            Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
            for (Eigen::Index i = 0; i < m; ++i)
                var += resp(i, c) * (points.row(i).transpose() - mu).array().square().matrix();
            model.mean[static_cast<std::size_t>(c)] = mu;
            model.variance[static_cast<std::size_t>(c)] =
                (var / nc).cwiseMax(kGmmVarianceFloor);
        }
        const double wsum = model.weight[0] + model.weight[1];
        model.weight[0] /= wsum;
        model.weight[1] /= wsum;
    }
    return model;
}

GmmAssignment assign(const GmmModel& model, const Eigen::MatrixXd& points) {
    if (model.degenerate) throw DegenerateClustering("GMM fit is degenerate");
    GmmAssignment out;
    e_step(model, points, out.responsibilities);
    out.labels.reserve(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        out.labels.push_back(out.responsibilities(i, 1) > out.responsibilities(i, 0) ? 1 : 0);
    return out;
}

int denser_cluster(const GmmModel& model, const Eigen::MatrixXd& points,
                   const std::vector<int>& labels) {
    if (model.degenerate) return -1;
    std::array<double, 2> total{0.0, 0.0};
    std::array<double, 2> magnitude{0.0, 0.0};
    std::array<int, 2> count{0, 0};
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const int c = labels[static_cast<std::size_t>(i)];
        total[static_cast<std::size_t>(c)] +=
            (points.row(i).transpose() - model.mean[static_cast<std::size_t>(c)]).norm();
        magnitude[static_cast<std::size_t>(c)] += points.row(i).norm();
        count[static_cast<std::size_t>(c)] += 1;
    }
    if (count[0] == 0 || count[1] == 0) return -1;
    // Compactness is judged relative to member magnitude: a cluster of small
    // updates is always absolutely tight, but coordinated large updates are
    // tight relative to their size.
    const double spread0 = (total[0] / count[0]) / std::max(magnitude[0] / count[0], 1e-12);
    const double spread1 = (total[1] / count[1]) / std::max(magnitude[1] / count[1], 1e-12);
    if (spread0 != spread1) return spread0 < spread1 ? 0 : 1;
    if (count[0] != count[1]) return count[0] < count[1] ? 0 : 1;
    return 0;
}

}  // namespace flsim

// Independent reference implementations used only by tests. Everything here
// is written with plain loops so it shares no code path with the library.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "flsim/nn.hpp"

namespace oracles {

using Matrix = std::vector<std::vector<double>>;

// Plain-loop forward pass: ReLU hidden layers, linear output.
inline Matrix forward(const flsim::ModelParams& params, const Matrix& inputs) {
    Matrix h = inputs;
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        const auto& layer = params.layers[li];
        Matrix next(h.size(), std::vector<double>(static_cast<std::size_t>(layer.weights.rows())));
        for (std::size_t i = 0; i < h.size(); ++i) {
            for (int r = 0; r < layer.weights.rows(); ++r) {
                double acc = layer.bias[r];
                for (int c = 0; c < layer.weights.cols(); ++c)
                    acc += layer.weights(r, c) * h[i][static_cast<std::size_t>(c)];
                if (li + 1 < params.layers.size() && acc < 0.0) acc = 0.0;
                next[i][static_cast<std::size_t>(r)] = acc;
            }
        }
        h = std::move(next);
    }
    return h;
}

// Central finite differences of the mean softmax cross-entropy.
inline flsim::ModelParams fd_gradient(const flsim::ModelParams& params,
                                      const Eigen::MatrixXd& x, const std::vector<int>& y,
                                      double h = 1e-5) {
    auto loss_at = [&](const flsim::ModelParams& p) {
        return flsim::softmax_cross_entropy(flsim::forward(p, x), y);
    };
    Eigen::VectorXd flat = params.flatten();
    Eigen::VectorXd grad(flat.size());
    for (Eigen::Index i = 0; i < flat.size(); ++i) {
        Eigen::VectorXd hi = flat, lo = flat;
        hi[i] += h;
        lo[i] -= h;
        grad[i] = (loss_at(flsim::ModelParams::unflatten(params, hi)) -
                   loss_at(flsim::ModelParams::unflatten(params, lo))) /
                  (2.0 * h);
    }
    return flsim::ModelParams::unflatten(params, grad);
}

// Elementwise mean of flattened models.
inline Eigen::VectorXd mean_oracle(const std::vector<flsim::ModelParams>& models) {
    Eigen::VectorXd acc = models[0].flatten();
    for (std::size_t i = 1; i < models.size(); ++i) acc += models[i].flatten();
    return acc / static_cast<double>(models.size());
}

// Brute-force Krum: O(M^2 d) pairwise distances, neighbor sums, lowest index
// on ties.
inline int krum_oracle(const std::vector<flsim::ModelParams>& models, int f) {
    const int m = static_cast<int>(models.size());
    std::vector<Eigen::VectorXd> flat;
    for (const auto& p : models) flat.push_back(p.flatten());
    int best = -1;
    double best_score = std::numeric_limits<double>::infinity();
    for (int i = 0; i < m; ++i) {
        std::vector<double> dists;
        for (int j = 0; j < m; ++j)
            if (j != i)
                dists.push_back((flat[static_cast<std::size_t>(i)] -
                                 flat[static_cast<std::size_t>(j)])
                                    .squaredNorm());
        std::sort(dists.begin(), dists.end());
        double score = 0.0;
        for (int n = 0; n < m - f - 2; ++n) score += dists[static_cast<std::size_t>(n)];
        if (score < best_score) {
            best_score = score;
            best = i;
        }
    }
    return best;
}

// Per-coordinate sort-and-slice trimmed mean.
inline Eigen::VectorXd tmean_oracle(const std::vector<flsim::ModelParams>& models, int b) {
    const int m = static_cast<int>(models.size());
    std::vector<Eigen::VectorXd> flat;
    for (const auto& p : models) flat.push_back(p.flatten());
    Eigen::VectorXd out(flat[0].size());
    for (Eigen::Index c = 0; c < out.size(); ++c) {
        std::vector<double> vals;
        for (int i = 0; i < m; ++i) vals.push_back(flat[static_cast<std::size_t>(i)][c]);
        std::sort(vals.begin(), vals.end());
        double acc = 0.0;
        for (int i = b; i < m - b; ++i) acc += vals[static_cast<std::size_t>(i)];
        out[c] = acc / (m - 2 * b);
    }
    return out;
}

inline Eigen::VectorXd median_oracle(const std::vector<flsim::ModelParams>& models) {
    const int m = static_cast<int>(models.size());
    std::vector<Eigen::VectorXd> flat;
    for (const auto& p : models) flat.push_back(p.flatten());
    Eigen::VectorXd out(flat[0].size());
    for (Eigen::Index c = 0; c < out.size(); ++c) {
        std::vector<double> vals;
        for (int i = 0; i < m; ++i) vals.push_back(flat[static_cast<std::size_t>(i)][c]);
        std::sort(vals.begin(), vals.end());
        out[c] = m % 2 ? vals[static_cast<std::size_t>(m / 2)]
                       : 0.5 * (vals[static_cast<std::size_t>(m / 2 - 1)] +
                                vals[static_cast<std::size_t>(m / 2)]);
    }
    return out;
}

// Reference EM for a 2-component diagonal GMM, same initialization rule as
// the library (median-norm split halves averaged, shared global variance)
// but written with plain loops.
struct RefGmm {
    double weight[2];
    std::vector<double> mean[2];
    std::vector<double> var[2];
    double log_likelihood = 0.0;
};

inline RefGmm ref_gmm_fit(const std::vector<std::vector<double>>& pts, int max_iter = 200,
                          double tol = 1e-8, double floor = 1e-6) {
    const std::size_t m = pts.size();
    const std::size_t d = pts[0].size();
    std::size_t ia = 0, ib = 1;
    double best = -1.0;
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = a + 1; b < m; ++b) {
            double dist = 0.0;
            for (std::size_t j = 0; j < d; ++j)
                dist += (pts[a][j] - pts[b][j]) * (pts[a][j] - pts[b][j]);
            if (dist > best) {
                best = dist;
                ia = a;
                ib = b;
            }
        }

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        double na = 0.0, nb = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            na += pts[a][j] * pts[a][j];
            nb += pts[b][j] * pts[b][j];
        }
        return na != nb ? na < nb : a < b;
    });
    const std::size_t cut = m / 2;
    std::vector<double> lo(d, 0.0), hi(d, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            if (i < cut)
                lo[j] += pts[order[i]][j] / static_cast<double>(cut);
            else
                hi[j] += pts[order[i]][j] / static_cast<double>(m - cut);
        }
    if (lo == hi) {
        lo = pts[ia];
        hi = pts[ib];
    }

    RefGmm g;
    g.weight[0] = g.weight[1] = 0.5;
    g.mean[0] = lo;
    g.mean[1] = hi;
    std::vector<double> gv(d, 0.0), gm(d, 0.0);
    for (const auto& p : pts)
        for (std::size_t j = 0; j < d; ++j) gm[j] += p[j] / static_cast<double>(m);
    for (const auto& p : pts)
        for (std::size_t j = 0; j < d; ++j)
            gv[j] += (p[j] - gm[j]) * (p[j] - gm[j]) / static_cast<double>(m);
    for (std::size_t j = 0; j < d; ++j) gv[j] = std::max(gv[j], floor);
    g.var[0] = g.var[1] = gv;

    const double log2pi = std::log(2.0 * std::acos(-1.0));
    std::vector<std::vector<double>> resp(m, std::vector<double>(2));
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iter; ++it) {
        double ll = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double logp[2];
            for (int c = 0; c < 2; ++c) {
                double quad = 0.0, logdet = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    quad += (pts[i][j] - g.mean[c][j]) * (pts[i][j] - g.mean[c][j]) /
                            g.var[c][j];
                    logdet += std::log(g.var[c][j]);
                }
                logp[c] = std::log(g.weight[c]) -
                          0.5 * (static_cast<double>(d) * log2pi + logdet + quad);
            }
            const double hi = std::max(logp[0], logp[1]);
            const double lse =
                hi + std::log(std::exp(logp[0] - hi) + std::exp(logp[1] - hi));
            ll += lse;
            resp[i][0] = std::exp(logp[0] - lse);
            resp[i][1] = std::exp(logp[1] - lse);
        }
        g.log_likelihood = ll;
        if (it > 0 && ll - prev_ll < tol) break;
        prev_ll = ll;

        for (int c = 0; c < 2; ++c) {
            double nc = 0.0;
            for (std::size_t i = 0; i < m; ++i) nc += resp[i][static_cast<std::size_t>(c)];
            nc = std::max(nc, 1e-12);
            g.weight[c] = nc / static_cast<double>(m);
            for (std::size_t j = 0; j < d; ++j) {
                double mu = 0.0;
                for (std::size_t i = 0; i < m; ++i)
                    mu += resp[i][static_cast<std::size_t>(c)] * pts[i][j];
                mu /= nc;
                double v = 0.0;
                for (std::size_t i = 0; i < m; ++i)
                    v += resp[i][static_cast<std::size_t>(c)] * (pts[i][j] - mu) *
                         (pts[i][j] - mu);
                g.mean[c][j] = mu;
                g.var[c][j] = std::max(v / nc, floor);
            }
        }
        const double ws = g.weight[0] + g.weight[1];
        g.weight[0] /= ws;
        g.weight[1] /= ws;
    }
    return g;
}

}  // namespace oracles

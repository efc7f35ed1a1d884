#pragma once

// Optimization drivers: shuffled mini-batch SGD with momentum, and a
// full-batch descent-to-stationarity loop with backtracking line search
// used to manufacture approximate differentiable stationary points.

#include "lossmin/network.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

namespace lossmin {

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    Eigen::Index batch_size = 200;
    Eigen::Index epochs = 40;
    std::uint64_t seed = 0;

    void validate() const {
        if (learning_rate < 0.0) throw DataError("train: learning_rate must be >= 0");
        if (momentum < 0.0 || momentum >= 1.0) throw DataError("train: momentum in [0,1)");
        if (batch_size < 1) throw DataError("train: batch_size must be >= 1");
    }
};

struct StationarityReport {
    double grad_norm = 0.0;
    double min_abs_preactivation = std::numeric_limits<double>::infinity();
    Eigen::Index iterations_used = 0;
    bool differentiable = false;
};

class NumericalFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainResult {
    NetworkParams params;
    std::vector<double> loss_history;  // full-data loss after each epoch
};

inline TrainResult train_sgd(const NetworkParams& start, const DenseMatrix& X,
                             const DenseMatrix& Y, const TrainConfig& cfg) {
    cfg.validate();
    start.validate();
    if (X.rows() != Y.rows()) throw DataError("train: X/Y row mismatch");

    const Eigen::Index m = X.rows();
    NetworkParams params = start;
    std::vector<DenseMatrix> velocity;
    for (const auto& w : params.weights) velocity.push_back(DenseMatrix::Zero(w.rows(), w.cols()));

    std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    TrainResult result;
    for (Eigen::Index epoch = 0; epoch < cfg.epochs; ++epoch) {
        // per-epoch generator keeps mini-batch order reproducible
        std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(epoch) + 1);
        std::shuffle(order.begin(), order.end(), rng);
        for (Eigen::Index off = 0; off < m; off += cfg.batch_size) {
            const Eigen::Index n = std::min(cfg.batch_size, m - off);
            DenseMatrix xb(n, X.cols()), yb(n, Y.cols());
            for (Eigen::Index i = 0; i < n; ++i) {
                xb.row(i) = X.row(order[static_cast<std::size_t>(off + i)]);
                yb.row(i) = Y.row(order[static_cast<std::size_t>(off + i)]);
            }
            const GradientResult g = gradient(params, xb, yb);
            for (std::size_t l = 0; l < params.weights.size(); ++l) {
                velocity[l] = cfg.momentum * velocity[l] - cfg.learning_rate * g.grads[l];
                params.weights[l] += velocity[l];
            }
        }
        const double epoch_loss = loss(forward(params, X), Y);
        if (!std::isfinite(epoch_loss)) {
            throw NumericalFailure("train_sgd: loss diverged to NaN/Inf at epoch " +
                                   std::to_string(epoch) + "; lower the learning rate");
        }
        result.loss_history.push_back(epoch_loss);
    }
    result.params = std::move(params);
    return result;
}

struct DescentResult {
    NetworkParams params;
    StationarityReport report;
};

// Full-batch gradient descent with Armijo backtracking (initial step 1.0,
// shrink 0.5, sufficient-decrease constant 1e-4) until the gradient norm
// drops to `tol` or `max_iters` is exhausted. Exhaustion returns the best
// point seen; it is not an error.
inline DescentResult descend_to_stationarity(const NetworkParams& start, const DenseMatrix& X,
                                             const DenseMatrix& Y, double tol,
                                             Eigen::Index max_iters,
                                             double eps_act = kDefaultEpsAct) {
    if (tol <= 0.0) throw DataError("descend: tol must be positive");
    start.validate();

    constexpr double kArmijo = 1e-4;
    constexpr double kShrink = 0.5;

    NetworkParams params = start;
    double current_loss = loss(forward(params, X), Y);

    NetworkParams best = params;
    double best_grad_norm = std::numeric_limits<double>::infinity();

    Eigen::Index iter = 0;
    for (; iter < max_iters; ++iter) {
        const GradientResult g = gradient(params, X, Y, eps_act);
        const double gnorm = g.norm();
        if (gnorm < best_grad_norm) {
            best_grad_norm = gnorm;
            best = params;
        }
        if (gnorm <= tol) break;

        double step = 1.0;
        const double g2 = gnorm * gnorm;
        bool accepted = false;
        while (step > 1e-20) {
            NetworkParams trial = params;
            for (std::size_t l = 0; l < trial.weights.size(); ++l)
                trial.weights[l] -= step * g.grads[l];
            const double trial_loss = loss(forward(trial, X), Y);
            if (std::isfinite(trial_loss) && trial_loss <= current_loss - kArmijo * step * g2) {
                params = std::move(trial);
                current_loss = trial_loss;
                accepted = true;
                break;
            }
            step *= kShrink;
        }
        if (!accepted) break;  // no decrease possible at any representable step
    }

    // report from the best point, not the last trial
    const GradientResult g = gradient(best, X, Y, eps_act);
    const ActivationTensor pat = activation_patterns(forward(best, X), best, eps_act);
    DescentResult out;
    out.params = std::move(best);
    out.report.grad_norm = g.norm();
    out.report.min_abs_preactivation = pat.min_abs_preactivation;
    out.report.iterations_used = iter;
    out.report.differentiable = pat.exact_zero_hits == 0;
    return out;
}

}  // namespace lossmin

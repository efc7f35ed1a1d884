#pragma once

// Test-only helpers for manufacturing differentiable stationary points of
// small piecewise-linear-activation networks.
//
// Plain gradient descent on these losses routinely terminates at kink points
// (nondifferentiable V-bottoms), where the closed-form results do not apply.
// The helper below instead polishes a near-minimum starting point with
// alternating per-layer least squares on the pattern-frozen network: with the
// activation patterns held fixed, the network output is exactly linear in any
// single layer's weights, so each layer solve is a proximally damped linear
// regression. Updates that would flip any activation pattern are rejected and
// the damping increased, which keeps the iterate inside the differentiable
// region. A converged point has zero gradient for the frozen problem, and the
// frozen problem agrees with the true loss on a neighbourhood, so the point
// is a genuine differentiable stationary point of the true loss.

#include <lossmin/minima.hpp>
#include <lossmin/network.hpp>

#include <optional>
#include <random>

namespace lossmin::testsupport {

inline DenseMatrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    DenseMatrix out(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = normal(rng);
    return out;
}

// Forward pass with the activation patterns pinned to `pat` instead of being
// recomputed from the preactivation signs.
inline ForwardTrace frozen_forward(const NetworkParams& p, const DenseMatrix& X,
                                   const ActivationTensor& pat) {
    const Eigen::Index H = p.arch.depth();
    ForwardTrace t;
    t.phi.resize(static_cast<std::size_t>(H + 2));
    t.pre.resize(static_cast<std::size_t>(H + 1));
    t.phi[0] = X;
    for (Eigen::Index l = 1; l <= H; ++l) {
        t.pre[static_cast<std::size_t>(l - 1)] =
            t.phi[static_cast<std::size_t>(l - 1)] * p.weights[static_cast<std::size_t>(l - 1)];
        t.phi[static_cast<std::size_t>(l)] = pat.lambda[static_cast<std::size_t>(l - 1)]
                                                 .cwiseProduct(t.pre[static_cast<std::size_t>(l - 1)]);
    }
    t.pre[static_cast<std::size_t>(H)] =
        t.phi[static_cast<std::size_t>(H)] * p.weights[static_cast<std::size_t>(H)];
    t.phi[static_cast<std::size_t>(H + 1)] = t.pre[static_cast<std::size_t>(H)];
    return t;
}

// True-network patterns at `p` equal `pat0`, with every preactivation at
// least `margin` away from the activation kinks.
inline bool same_pattern(const NetworkParams& p, const DenseMatrix& X,
                         const ActivationTensor& pat0, double margin) {
    const ActivationTensor pe = activation_patterns(forward(p, X), p);
    if (pe.exact_zero_hits > 0 || pe.min_abs_preactivation < margin) return false;
    for (std::size_t i = 0; i < pe.lambda.size(); ++i)
        if ((pe.lambda[i] - pat0.lambda[i]).cwiseAbs().maxCoeff() != 0.0) return false;
    return true;
}

// Spot-check of local minimality: no loss decrease along `trials` random
// parameter perturbations of size `radius`.
inline bool perturbation_minimality(const NetworkParams& p, const DenseMatrix& X,
                                    const DenseMatrix& Y, std::uint64_t seed, int trials = 50,
                                    double radius = 1e-5) {
    const double L0 = loss(forward(p, X), Y);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int k = 0; k < trials; ++k) {
        NetworkParams q = p;
        double norm2 = 0.0;
        std::vector<DenseMatrix> deltas;
        deltas.reserve(q.weights.size());
        for (const auto& w : q.weights) {
            DenseMatrix d(w.rows(), w.cols());
            for (Eigen::Index j = 0; j < d.size(); ++j) d.data()[j] = normal(rng);
            norm2 += d.squaredNorm();
            deltas.push_back(std::move(d));
        }
        const double scale = radius / std::sqrt(norm2);
        for (std::size_t l = 0; l < q.weights.size(); ++l) q.weights[l] += scale * deltas[l];
        if (loss(forward(q, X), Y) < L0 - 1e-14) return false;
    }
    return true;
}

// Alternating proximal least squares on the pattern-frozen network, starting
// from `start` (whose patterns must be kink-free). Returns a parameter point
// with true-loss gradient norm <= tol, identical activation patterns, and a
// passing local-minimality spot check; nullopt when the polish stalls or the
// constrained optimum sits on a pattern boundary.
inline std::optional<NetworkParams> polish_to_stationary(const NetworkParams& start,
                                                         const DenseMatrix& X,
                                                         const DenseMatrix& Y, double tol = 1e-10,
                                                         int max_rounds = 300) {
    const ActivationTensor pat0 = activation_patterns(forward(start, X), start);
    if (pat0.exact_zero_hits > 0 || pat0.min_abs_preactivation < 1e-6) return std::nullopt;
    if (Y.cols() != 1) return std::nullopt;  // scalar-output polish only

    NetworkParams p = start;
    const Eigen::Index H = p.arch.depth();
    const Eigen::Index m = X.rows();
    double mu = 1.0;
    double g = std::numeric_limits<double>::infinity();
    for (int round = 0; round < max_rounds; ++round) {
        bool any_accepted = false;
        for (Eigen::Index l = H + 1; l >= 1; --l) {
            const ForwardTrace t = frozen_forward(p, X, pat0);
            DenseMatrix D;
            if (l == H + 1) {
                D = t.phi[static_cast<std::size_t>(H)];
            } else {
                const Eigen::Index dl = p.arch.layer_width(l);
                const Eigen::Index dprev = p.arch.layer_width(l - 1);
                D.resize(m, dl * dprev);
                for (Eigen::Index k = 0; k < dl; ++k)
                    D.middleCols(k * dprev, dprev) = assemble_block(t, pat0, p, l, k);
            }
            const DenseMatrix& wc = p.weights[static_cast<std::size_t>(l - 1)];
            const Vector wflat = Eigen::Map<const Vector>(wc.data(), wc.size());
            const DenseMatrix A =
                D.transpose() * D + mu * DenseMatrix::Identity(D.cols(), D.cols());
            const Vector rhs = D.transpose() * Y.col(0) + mu * wflat;
            const Vector wn = A.ldlt().solve(rhs);
            NetworkParams trial = p;
            DenseMatrix& wt = trial.weights[static_cast<std::size_t>(l - 1)];
            for (Eigen::Index j = 0; j < wt.size(); ++j) wt.data()[j] = wn[j];
            if (same_pattern(trial, X, pat0, 1e-8)) {
                p = std::move(trial);
                any_accepted = true;
            }
        }
        g = gradient(p, X, Y).norm();
        if (g <= tol) break;
        mu = any_accepted ? mu * 0.7 : mu * 4.0;
        mu = std::min(std::max(mu, 1e-12), 1e12);
    }
    if (g > tol || !same_pattern(p, X, pat0, 1e-8)) return std::nullopt;
    if (!perturbation_minimality(p, X, Y, 12345)) return std::nullopt;
    return p;
}

// Convenience: teacher-anchored stationary point of a fresh network of the
// given architecture, with a near-realizable target. Returns the point and
// the data it is stationary for.
struct StationaryProblem {
    NetworkParams params;
    DenseMatrix X;
    DenseMatrix Y;
};

inline std::optional<StationaryProblem> make_stationary_problem(const NetworkArch& arch,
                                                                Eigen::Index m,
                                                                std::uint64_t seed,
                                                                double noise = 0.05) {
    const NetworkParams teacher = init_params(arch, seed * 31 + 7);
    const DenseMatrix X = gaussian_matrix(m, arch.input_dim, seed + 10);
    const DenseMatrix Y =
        forward(teacher, X).output() + noise * gaussian_matrix(m, arch.output_dim, seed + 20);
    auto polished = polish_to_stationary(teacher, X, Y);
    if (!polished) return std::nullopt;
    return StationaryProblem{std::move(*polished), X, Y};
}

}  // namespace lossmin::testsupport

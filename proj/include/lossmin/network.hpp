#pragma once

// Fully connected feedforward model without biases: forward pass,
// activation-pattern extraction with differentiability detection,
// squared loss, backpropagation, and seeded initialization.

#include "lossmin/matrix.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lossmin {

constexpr double kDefaultEpsAct = 1e-12;

struct ActivationKind {
    enum class Tag { ReLU, LeakyReLU, Abs, Linear };
    Tag tag = Tag::ReLU;
    double leaky_slope = 0.01;  // only meaningful for LeakyReLU, must be <= 1

    static ActivationKind relu() { return {Tag::ReLU, 0.0}; }
    static ActivationKind leaky(double a) {
        if (a > 1.0) throw DataError("leaky slope must be <= 1");
        return {Tag::LeakyReLU, a};
    }
    static ActivationKind abs() { return {Tag::Abs, 0.0}; }
    static ActivationKind linear() { return {Tag::Linear, 0.0}; }

    double value(double z) const {
        switch (tag) {
            case Tag::ReLU: return z > 0.0 ? z : 0.0;
            case Tag::LeakyReLU: return z > 0.0 ? z : leaky_slope * z;
            case Tag::Abs: return std::abs(z);
            case Tag::Linear: return z;
        }
        return z;
    }

    // Derivative where it exists; the caller zeroes entries inside the
    // eps_act band around a kink. Linear (and slope-1 leaky) has no kink.
    double derivative(double z) const {
        switch (tag) {
            case Tag::ReLU: return z > 0.0 ? 1.0 : 0.0;
            case Tag::LeakyReLU: return z > 0.0 ? 1.0 : leaky_slope;
            case Tag::Abs: return z >= 0.0 ? 1.0 : -1.0;
            case Tag::Linear: return 1.0;
        }
        return 1.0;
    }

    bool has_kink() const {
        if (tag == Tag::Linear) return false;
        if (tag == Tag::LeakyReLU && leaky_slope == 1.0) return false;
        return true;
    }
};

inline const char* to_string(ActivationKind::Tag t) {
    switch (t) {
        case ActivationKind::Tag::ReLU: return "relu";
        case ActivationKind::Tag::LeakyReLU: return "leaky_relu";
        case ActivationKind::Tag::Abs: return "abs";
        case ActivationKind::Tag::Linear: return "linear";
    }
    return "?";
}

inline ActivationKind activation_from_string(const std::string& s, double leaky_slope = 0.01) {
    if (s == "relu") return ActivationKind::relu();
    if (s == "leaky_relu") return ActivationKind::leaky(leaky_slope);
    if (s == "abs") return ActivationKind::abs();
    if (s == "linear") return ActivationKind::linear();
    throw DataError("unknown activation: " + s);
}

struct NetworkArch {
    Eigen::Index input_dim = 0;
    Eigen::Index output_dim = 0;
    std::vector<Eigen::Index> hidden_widths;          // d_1 .. d_H
    std::vector<ActivationKind> activations;          // one per hidden layer

    NetworkArch() = default;
    NetworkArch(Eigen::Index d_x, Eigen::Index d_y, std::vector<Eigen::Index> widths,
                ActivationKind act)
        : input_dim(d_x), output_dim(d_y), hidden_widths(std::move(widths)) {
        activations.assign(hidden_widths.size(), act);
        validate();
    }
    NetworkArch(Eigen::Index d_x, Eigen::Index d_y, std::vector<Eigen::Index> widths,
                std::vector<ActivationKind> acts)
        : input_dim(d_x),
          output_dim(d_y),
          hidden_widths(std::move(widths)),
          activations(std::move(acts)) {
        validate();
    }

    void validate() const {
        if (input_dim < 1 || output_dim < 1) throw DataError("arch: dims must be >= 1");
        for (auto w : hidden_widths)
            if (w < 1) throw DataError("arch: widths must be >= 1");
        if (activations.size() != hidden_widths.size())
            throw DataError("arch: one activation per hidden layer");
    }

    Eigen::Index depth() const { return static_cast<Eigen::Index>(hidden_widths.size()); }

    // d_0 = d_x, d_l for hidden layers, d_{H+1} = d_y.
    Eigen::Index layer_width(Eigen::Index l) const {
        if (l == 0) return input_dim;
        if (l == depth() + 1) return output_dim;
        return hidden_widths[static_cast<std::size_t>(l - 1)];
    }
};

struct NetworkParams {
    NetworkArch arch;
    std::vector<DenseMatrix> weights;  // W^(l) in R^{d_{l-1} x d_l}, l = 1..H+1

    void validate() const {
        const Eigen::Index H = arch.depth();
        if (static_cast<Eigen::Index>(weights.size()) != H + 1)
            throw DataError("params: expected H+1 weight matrices");
        for (Eigen::Index l = 1; l <= H + 1; ++l) {
            const auto& w = weights[static_cast<std::size_t>(l - 1)];
            if (w.rows() != arch.layer_width(l - 1) || w.cols() != arch.layer_width(l))
                throw DataError("params: weight shape mismatch at layer " + std::to_string(l));
            require_finite(w, "W(" + std::to_string(l) + ")");
        }
    }

    Eigen::Index num_parameters() const {
        Eigen::Index n = 0;
        for (const auto& w : weights) n += w.size();
        return n;
    }
};

// Phi^(0) = X, Phi^(l) = sigma(G^(l)), Phi^(H+1) = Yhat; G^(l) = Phi^(l-1) W^(l).
struct ForwardTrace {
    std::vector<DenseMatrix> phi;  // Phi^(0) .. Phi^(H+1)
    std::vector<DenseMatrix> pre;  // G^(1) .. G^(H+1)

    const DenseMatrix& output() const { return phi.back(); }
    const DenseMatrix& input() const { return phi.front(); }
};

// lambda[l-1] holds the m x d_l matrix of activation derivatives at layer l.
struct ActivationTensor {
    std::vector<DenseMatrix> lambda;
    Eigen::Index exact_zero_hits = 0;
    double min_abs_preactivation = std::numeric_limits<double>::infinity();
};

inline NetworkParams init_params(const NetworkArch& arch, std::uint64_t seed, double scale = 1.0) {
    if (scale <= 0.0) throw DataError("init_params: scale must be positive");
    arch.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    NetworkParams p;
    p.arch = arch;
    const Eigen::Index H = arch.depth();
    for (Eigen::Index l = 1; l <= H + 1; ++l) {
        const Eigen::Index fan_in = arch.layer_width(l - 1);
        const Eigen::Index fan_out = arch.layer_width(l);
        const double sd = scale / std::sqrt(static_cast<double>(fan_in));
        DenseMatrix w(fan_in, fan_out);
        for (Eigen::Index j = 0; j < fan_out; ++j)
            for (Eigen::Index i = 0; i < fan_in; ++i) w(i, j) = sd * normal(rng);
        p.weights.push_back(std::move(w));
    }
    return p;
}

inline ForwardTrace forward(const NetworkParams& params, const DenseMatrix& X) {
    params.validate();
    if (X.cols() != params.arch.input_dim) throw DataError("forward: X column count != d_x");
    require_finite(X, "X");
    const Eigen::Index H = params.arch.depth();
    ForwardTrace t;
    t.phi.reserve(static_cast<std::size_t>(H) + 2);
    t.pre.reserve(static_cast<std::size_t>(H) + 1);
    t.phi.push_back(X);
    for (Eigen::Index l = 1; l <= H; ++l) {
        const DenseMatrix g = t.phi.back() * params.weights[static_cast<std::size_t>(l - 1)];
        const auto& act = params.arch.activations[static_cast<std::size_t>(l - 1)];
        t.phi.push_back(g.unaryExpr([&act](double z) { return act.value(z); }));
        t.pre.push_back(g);
    }
    DenseMatrix yhat = t.phi.back() * params.weights.back();
    t.pre.push_back(yhat);
    t.phi.push_back(std::move(yhat));
    return t;
}

inline ActivationTensor activation_patterns(const ForwardTrace& trace, const NetworkParams& params,
                                            double eps_act = kDefaultEpsAct) {
    const Eigen::Index H = params.arch.depth();
    ActivationTensor out;
    out.lambda.reserve(static_cast<std::size_t>(H));
    for (Eigen::Index l = 1; l <= H; ++l) {
        const auto& act = params.arch.activations[static_cast<std::size_t>(l - 1)];
        const DenseMatrix& g = trace.pre[static_cast<std::size_t>(l - 1)];
        DenseMatrix lam(g.rows(), g.cols());
        for (Eigen::Index j = 0; j < g.cols(); ++j) {
            for (Eigen::Index i = 0; i < g.rows(); ++i) {
                const double z = g(i, j);
                if (act.has_kink()) {
                    out.min_abs_preactivation = std::min(out.min_abs_preactivation, std::abs(z));
                    if (std::abs(z) <= eps_act) {
                        lam(i, j) = 0.0;  // derivative does not exist here
                        ++out.exact_zero_hits;
                        continue;
                    }
                }
                lam(i, j) = act.derivative(z);
            }
        }
        out.lambda.push_back(std::move(lam));
    }
    return out;
}

inline double loss(const ForwardTrace& trace, const DenseMatrix& Y) {
    const DenseMatrix& yhat = trace.output();
    if (yhat.rows() != Y.rows() || yhat.cols() != Y.cols())
        throw DataError("loss: prediction/target shape mismatch");
    return 0.5 * (yhat - Y).squaredNorm();
}

struct GradientResult {
    std::vector<DenseMatrix> grads;  // dL/dW^(l)
    bool subgradient_warning = false;  // some preactivation sat on a kink

    double norm() const {
        double s = 0.0;
        for (const auto& g : grads) s += g.squaredNorm();
        return std::sqrt(s);
    }
};

// Backpropagation of the squared loss, using the Lambda values as the
// activation derivatives (subgradient 0 at kinks).
inline GradientResult gradient(const NetworkParams& params, const DenseMatrix& X,
                               const DenseMatrix& Y, double eps_act = kDefaultEpsAct) {
    const ForwardTrace t = forward(params, X);
    const ActivationTensor pat = activation_patterns(t, params, eps_act);
    const Eigen::Index H = params.arch.depth();

    GradientResult r;
    r.subgradient_warning = pat.exact_zero_hits > 0;
    r.grads.resize(static_cast<std::size_t>(H) + 1);

    DenseMatrix delta = t.output() - Y;  // m x d_y
    r.grads[static_cast<std::size_t>(H)] = t.phi[static_cast<std::size_t>(H)].transpose() * delta;
    for (Eigen::Index l = H; l >= 1; --l) {
        delta = (delta * params.weights[static_cast<std::size_t>(l)].transpose())
                    .cwiseProduct(pat.lambda[static_cast<std::size_t>(l - 1)]);
        r.grads[static_cast<std::size_t>(l - 1)] =
            t.phi[static_cast<std::size_t>(l - 1)].transpose() * delta;
    }
    return r;
}

}  // namespace lossmin

#pragma once

// Synthetic regression data from a seeded tanh ground-truth network.
// tanh is used only to generate targets; it is never an analyzed
// activation.

#include "lossmin/network.hpp"
#include "lossmin/random_lab.hpp"

#include <cmath>

namespace lossmin {

struct SyntheticConfig {
    Eigen::Index samples = 512;
    Eigen::Index input_dim = 6;
    Eigen::Index output_dim = 1;
    Eigen::Index hidden_layers = 3;
    Eigen::Index hidden_width = 16;
    double weight_scale = 2.0;  // ground-truth std is weight_scale / sqrt(fan_in)
    std::uint64_t seed = 0;
};

struct SyntheticData {
    DenseMatrix X;
    DenseMatrix Y;
};

inline SyntheticData gen_synthetic(const SyntheticConfig& cfg) {
    if (cfg.samples < 1) throw DataError("gen_synthetic: samples must be >= 1");
    const NetworkArch arch(cfg.input_dim, cfg.output_dim,
                           std::vector<Eigen::Index>(static_cast<std::size_t>(cfg.hidden_layers),
                                                     cfg.hidden_width),
                           ActivationKind::linear());
    const NetworkParams truth = init_params(arch, cfg.seed, cfg.weight_scale);

    SyntheticData data;
    data.X = sample_gaussian(cfg.samples, cfg.input_dim, cfg.seed + 1);

    // forward pass with tanh hidden layers
    DenseMatrix h = data.X;
    for (Eigen::Index l = 1; l <= cfg.hidden_layers; ++l) {
        h = (h * truth.weights[static_cast<std::size_t>(l - 1)])
                .unaryExpr([](double z) { return std::tanh(z); });
    }
    data.Y = h * truth.weights.back();
    return data;
}

}  // namespace lossmin

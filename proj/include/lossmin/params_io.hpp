#pragma once

// NetworkParams on disk: a directory of per-layer matrices in the raw
// binary format plus a JSON manifest with the architecture metadata.

#include "lossmin/network.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>

namespace lossmin {

inline void save_params(const NetworkParams& params, const std::filesystem::path& dir,
                        std::uint64_t seed = 0, double scale = 1.0) {
    params.validate();
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["input_dim"] = params.arch.input_dim;
    manifest["output_dim"] = params.arch.output_dim;
    manifest["hidden_widths"] = params.arch.hidden_widths;
    manifest["seed"] = seed;
    manifest["scale"] = scale;
    nlohmann::json acts = nlohmann::json::array();
    for (const auto& a : params.arch.activations) {
        nlohmann::json e;
        e["kind"] = to_string(a.tag);
        if (a.tag == ActivationKind::Tag::LeakyReLU) e["slope"] = a.leaky_slope;
        acts.push_back(e);
    }
    manifest["activations"] = acts;
    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw DataError("cannot write manifest in " + dir.string());
    mf << manifest.dump(2) << '\n';

    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        write_binary(params.weights[l], (dir / ("W" + std::to_string(l + 1) + ".bin")).string());
    }
}

inline NetworkParams load_params(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw DataError("cannot open manifest in " + dir.string());
    nlohmann::json manifest;
    mf >> manifest;

    NetworkArch arch;
    arch.input_dim = manifest.at("input_dim").get<Eigen::Index>();
    arch.output_dim = manifest.at("output_dim").get<Eigen::Index>();
    arch.hidden_widths = manifest.at("hidden_widths").get<std::vector<Eigen::Index>>();
    for (const auto& e : manifest.at("activations")) {
        const std::string kind = e.at("kind").get<std::string>();
        arch.activations.push_back(
            activation_from_string(kind, e.value("slope", 0.01)));
    }
    arch.validate();

    NetworkParams p;
    p.arch = arch;
    for (Eigen::Index l = 1; l <= arch.depth() + 1; ++l) {
        p.weights.push_back(
            read_binary_file((dir / ("W" + std::to_string(l) + ".bin")).string()));
    }
    p.validate();
    return p;
}

}  // namespace lossmin

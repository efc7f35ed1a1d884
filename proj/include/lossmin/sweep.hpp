#pragma once

// Depth x width sweep: per cell, initialize a network (seed derived from
// base seed, depth, and width), record sqrt(J) at initialization, train,
// and record it again. Cells run concurrently up to a jobs limit; output
// order is the deterministic grid order.

#include "lossmin/minima.hpp"
#include "lossmin/trainer.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace lossmin {

struct SweepConfig {
    std::vector<Eigen::Index> depths;
    std::vector<Eigen::Index> widths;
    TrainConfig train;
    std::uint64_t seed = 0;
    CutoffCriterion cutoff = CutoffCriterion::PressEtAl;
    ActivationKind activation = ActivationKind::relu();
    int jobs = 1;

    void validate() const {
        if (depths.empty() || widths.empty()) throw DataError("sweep: empty grid");
        train.validate();
    }
};

struct SweepCell {
    Eigen::Index depth = 0;
    Eigen::Index width = 0;
    std::string phase;  // "init" or "trained"
    double sqrt_J = 0.0;
    double L = 0.0;
    double grad_norm = 0.0;
    bool failed = false;
    std::string error;
};

inline std::uint64_t cell_seed(std::uint64_t base, Eigen::Index depth, Eigen::Index width) {
    return base ^ (static_cast<std::uint64_t>(depth) * 0x9e3779b97f4a7c15ULL) ^
           (static_cast<std::uint64_t>(width) * 0xc2b2ae3d27d4eb4fULL);
}

inline std::vector<SweepCell> run_sweep(const SweepConfig& cfg, const DenseMatrix& X,
                                        const DenseMatrix& Y) {
    cfg.validate();
    struct Task {
        Eigen::Index depth, width;
    };
    std::vector<Task> tasks;
    for (auto h : cfg.depths)
        for (auto w : cfg.widths) tasks.push_back({h, w});

    std::vector<std::vector<SweepCell>> results(tasks.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            const auto [depth, width] = tasks[i];
            auto& cells = results[i];
            SweepCell base;
            base.depth = depth;
            base.width = width;
            try {
                const NetworkArch arch(
                    X.cols(), Y.cols(),
                    std::vector<Eigen::Index>(static_cast<std::size_t>(depth), width),
                    cfg.activation);
                const std::uint64_t seed = cell_seed(cfg.seed, depth, width);
                const NetworkParams init = init_params(arch, seed, 1.0);

                auto record = [&](const NetworkParams& p, const char* phase) {
                    const MinimaReport r = compute_J(p, X, Y, cfg.cutoff);
                    SweepCell cell = base;
                    cell.phase = phase;
                    cell.sqrt_J = std::sqrt(std::max(0.0, r.J_direct));
                    cell.L = r.L_value;
                    cell.grad_norm = r.grad_norm;
                    cells.push_back(cell);
                };
                record(init, "init");

                TrainConfig tc = cfg.train;
                tc.seed = seed;
                const TrainResult trained = train_sgd(init, X, Y, tc);
                record(trained.params, "trained");
            } catch (const std::exception& e) {
                SweepCell cell = base;
                cell.failed = true;
                cell.error = e.what();
                cells.push_back(cell);
            }
        }
    };

    const int jobs = std::max(1, cfg.jobs);
    std::vector<std::thread> pool;
    for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::vector<SweepCell> out;
    for (auto& cells : results)
        for (auto& c : cells) out.push_back(std::move(c));
    return out;
}

inline std::string sweep_csv(const std::vector<SweepCell>& cells) {
    std::ostringstream os;
    os << "H,d,phase,sqrt_J,L,grad_norm,error\n";
    os.precision(17);
    for (const auto& c : cells) {
        os << c.depth << ',' << c.width << ',' << (c.failed ? "error" : c.phase) << ',';
        if (c.failed)
            os << ",,," << '"' << c.error << '"';
        else
            os << c.sqrt_J << ',' << c.L << ',' << c.grad_norm << ',';
        os << '\n';
    }
    return os.str();
}

// Minimal self-contained SVG heat map over the (width, depth) grid with a
// linear color scale from 0 to the maximum observed sqrt(J); the maximum
// is recorded in the SVG metadata.
inline std::string sweep_svg(const std::vector<SweepCell>& cells,
                             const std::vector<Eigen::Index>& depths,
                             const std::vector<Eigen::Index>& widths, const std::string& phase) {
    double max_v = 0.0;
    auto find_cell = [&](Eigen::Index h, Eigen::Index w) -> const SweepCell* {
        for (const auto& c : cells)
            if (!c.failed && c.depth == h && c.width == w && c.phase == phase) return &c;
        return nullptr;
    };
    for (const auto& c : cells)
        if (!c.failed && c.phase == phase) max_v = std::max(max_v, c.sqrt_J);

    const int cell_px = 48, margin = 56;
    const int width_px = margin + cell_px * static_cast<int>(widths.size()) + 8;
    const int height_px = margin + cell_px * static_cast<int>(depths.size()) + 8;

    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_px << "\" height=\""
       << height_px << "\">\n"
       << "<metadata>phase=" << phase << " max_sqrt_J=" << max_v << "</metadata>\n";
    for (std::size_t r = 0; r < depths.size(); ++r) {
        for (std::size_t col = 0; col < widths.size(); ++col) {
            const SweepCell* c = find_cell(depths[r], widths[col]);
            const int x = margin + static_cast<int>(col) * cell_px;
            const int y = margin + static_cast<int>(r) * cell_px;
            std::string fill = "#cccccc";
            if (c) {
                const double v = max_v > 0.0 ? c->sqrt_J / max_v : 0.0;
                // white (0) to dark red (max)
                const int g = static_cast<int>(255.0 * (1.0 - v));
                char buf[16];
                std::snprintf(buf, sizeof(buf), "#ff%02x%02x", g, g);
                fill = buf;
            }
            os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_px
               << "\" height=\"" << cell_px << "\" fill=\"" << fill
               << "\" stroke=\"#333333\"/>\n";
        }
    }
    for (std::size_t col = 0; col < widths.size(); ++col)
        os << "<text x=\"" << margin + static_cast<int>(col) * cell_px + cell_px / 2 << "\" y=\""
           << margin - 8 << "\" text-anchor=\"middle\" font-size=\"12\">" << widths[col]
           << "</text>\n";
    for (std::size_t r = 0; r < depths.size(); ++r)
        os << "<text x=\"" << margin - 8 << "\" y=\""
           << margin + static_cast<int>(r) * cell_px + cell_px / 2 + 4
           << "\" text-anchor=\"end\" font-size=\"12\">" << depths[r] << "</text>\n";
    os << "<text x=\"" << margin << "\" y=\"16\" font-size=\"12\">sqrt(J), " << phase
       << " (max=" << max_v << ")</text>\n";
    os << "</svg>\n";
    return os.str();
}

}  // namespace lossmin

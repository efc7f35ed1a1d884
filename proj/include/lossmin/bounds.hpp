#pragma once

// Detection of locally induced nonlinear-linear structure (weakly or
// strongly separated linear units) and the structural upper bounds it
// licenses: basis-function-regression residual minus the sequential
// block-projection improvement term.

#include "lossmin/minima.hpp"

#include <json.hpp>

#include <algorithm>
#include <optional>
#include <vector>

namespace lossmin {

enum class StructureKind { Weak, Strong };

struct StructureCert {
    Eigen::Index t = 0;  // structure level: layers t+1 .. H+1 carry index sets
    // index_sets[i] is S^(t+1+i), 0-based unit indices, for i = 0..H-t.
    std::vector<std::vector<Eigen::Index>> index_sets;
    StructureKind kind = StructureKind::Weak;
    double tolerance = 0.0;

    const std::vector<Eigen::Index>& set_for_layer(Eigen::Index l) const {
        return index_sets.at(static_cast<std::size_t>(l - t - 1));
    }
};

struct BoundReport {
    std::vector<Eigen::Index> S;  // layer indices in {t..H}
    double regression_term = 0.0;
    double improvement_term = 0.0;
    double bound = 0.0;
    double L_value = 0.0;
};

inline nlohmann::json to_json(const StructureCert& c) {
    nlohmann::json j;
    j["t"] = c.t;
    j["kind"] = c.kind == StructureKind::Weak ? "weak" : "strong";
    j["tolerance"] = c.tolerance;
    j["index_sets"] = c.index_sets;
    return j;
}

inline nlohmann::json to_json(const BoundReport& r) {
    nlohmann::json j;
    j["S"] = r.S;
    j["regression_term"] = r.regression_term;
    j["improvement_term"] = r.improvement_term;
    j["bound"] = r.bound;
    j["L"] = r.L_value;
    return j;
}

namespace detail {

// Relative residual of "unit k at layer l acts linearly on the data":
// || Phi^(l)_{.,k} - G^(l)_{.,k} || against the preactivation scale.
inline bool unit_acts_linearly(const ForwardTrace& trace, Eigen::Index l, Eigen::Index k,
                               double tol) {
    const DenseMatrix& phi = trace.phi[static_cast<std::size_t>(l)];
    const DenseMatrix& g = trace.pre[static_cast<std::size_t>(l - 1)];
    const double scale = g.col(k).norm();
    if (scale == 0.0) return phi.col(k).norm() == 0.0;
    return (phi.col(k) - g.col(k)).norm() <= tol * scale;
}

}  // namespace detail

// Greedy search for an (n, t) certificate. Candidates per layer are all
// units acting linearly within tol; the edge condition is then enforced
// top-down (a unit stays selected only if its outgoing edges into
// non-selected units of the next layer are negligible relative to
// max|W^(l+1)|). For Strong, selected units must additionally receive
// effective input only from selected units of the previous layer.
inline std::optional<StructureCert> detect_structure(const ForwardTrace& trace,
                                                     const NetworkParams& params, Eigen::Index n,
                                                     Eigen::Index t, StructureKind kind,
                                                     double tol = 1e-9) {
    const Eigen::Index H = params.arch.depth();
    if (t < 0 || t > H) throw DataError("detect_structure: t out of range");

    StructureCert cert;
    cert.t = t;
    cert.kind = kind;
    cert.tolerance = tol;
    cert.index_sets.resize(static_cast<std::size_t>(H + 1 - t));

    // S^(H+1): the output layer is linear by construction, all units qualify.
    {
        auto& s = cert.index_sets.back();
        for (Eigen::Index k = 0; k < params.arch.output_dim; ++k) s.push_back(k);
    }

    for (Eigen::Index l = H; l >= t + 1; --l) {
        std::vector<Eigen::Index> selected;
        const auto& next_set = cert.index_sets[static_cast<std::size_t>(l - t)];
        const DenseMatrix& w_next = params.weights[static_cast<std::size_t>(l)];  // W^(l+1)
        const double w_scale = w_next.size() ? w_next.cwiseAbs().maxCoeff() : 0.0;
        std::vector<bool> in_next(static_cast<std::size_t>(w_next.cols()), false);
        for (auto k : next_set) in_next[static_cast<std::size_t>(k)] = true;

        for (Eigen::Index k = 0; k < params.arch.layer_width(l); ++k) {
            if (!detail::unit_acts_linearly(trace, l, k, tol)) continue;
            bool ok = true;
            if (l <= H - 1) {  // condition (iii) only constrains interior layers
                for (Eigen::Index k2 = 0; k2 < w_next.cols() && ok; ++k2) {
                    if (!in_next[static_cast<std::size_t>(k2)] &&
                        std::abs(w_next(k, k2)) > tol * w_scale)
                        ok = false;
                }
            }
            if (ok) selected.push_back(k);
        }
        cert.index_sets[static_cast<std::size_t>(l - t - 1)] = std::move(selected);
    }

    if (kind == StructureKind::Strong) {
        // Phi^(l) W^(l+1)_{.,k} must reduce to the selected columns' part
        // for every selected unit k of layer l+1, for l in {t+1..H-1}.
        for (Eigen::Index l = t + 1; l <= H - 1; ++l) {
            const auto& s_l = cert.set_for_layer(l);
            const auto& s_next = cert.set_for_layer(l + 1);
            std::vector<bool> in_s(static_cast<std::size_t>(params.arch.layer_width(l)), false);
            for (auto k : s_l) in_s[static_cast<std::size_t>(k)] = true;
            const DenseMatrix& phi = trace.phi[static_cast<std::size_t>(l)];
            const DenseMatrix& w = params.weights[static_cast<std::size_t>(l)];
            std::vector<Eigen::Index> kept;
            for (auto k : s_next) {
                Vector unselected_part = Vector::Zero(phi.rows());
                for (Eigen::Index k2 = 0; k2 < phi.cols(); ++k2)
                    if (!in_s[static_cast<std::size_t>(k2)])
                        unselected_part += phi.col(k2) * w(k2, k);
                const double scale = (phi * w.col(k)).norm();
                if (unselected_part.norm() <= tol * std::max(scale, 1.0)) kept.push_back(k);
            }
            cert.index_sets[static_cast<std::size_t>(l - t)] = std::move(kept);
        }
    }

    for (const auto& s : cert.index_sets)
        if (static_cast<Eigen::Index>(s.size()) < n) return std::nullopt;
    return cert;
}

// Global minimum of linear regression on the fixed feature matrix Phi_S:
// half the squared norm of the component of Y outside its column space.
inline double regression_optimum(const DenseMatrix& phi_S, const DenseMatrix& Y,
                                 CutoffCriterion c) {
    if (phi_S.cols() == 0) return 0.5 * Y.squaredNorm();
    if (phi_S.rows() != Y.rows()) throw DataError("regression_optimum: row mismatch");
    const ProjectorBasis b = column_space_basis(phi_S, c);
    return 0.5 * project_null(b, Y).squaredNorm();
}

namespace detail {

inline DenseMatrix concat_phi(const ForwardTrace& trace, const std::vector<Eigen::Index>& S) {
    const Eigen::Index m = trace.input().rows();
    Eigen::Index cols = 0;
    for (auto l : S) cols += trace.phi[static_cast<std::size_t>(l)].cols();
    DenseMatrix out(m, cols);
    Eigen::Index at = 0;
    for (auto l : S) {
        const auto& phi = trace.phi[static_cast<std::size_t>(l)];
        out.middleCols(at, phi.cols()) = phi;
        at += phi.cols();
    }
    return out;
}

// [I_{d_y} (x) Phi^(l)]_{l in S}
inline DenseMatrix concat_phi_bar(const ForwardTrace& trace, const std::vector<Eigen::Index>& S,
                                  Eigen::Index d_y) {
    const Eigen::Index m = trace.input().rows();
    Eigen::Index cols = 0;
    for (auto l : S) cols += trace.phi[static_cast<std::size_t>(l)].cols() * d_y;
    DenseMatrix out = DenseMatrix::Zero(m * d_y, cols);
    Eigen::Index at = 0;
    for (auto l : S) {
        const auto& phi = trace.phi[static_cast<std::size_t>(l)];
        for (Eigen::Index j = 0; j < d_y; ++j)
            out.block(j * m, at + j * phi.cols(), m, phi.cols()) = phi;
        at += phi.cols() * d_y;
    }
    return out;
}

inline void check_S(const std::vector<Eigen::Index>& S, Eigen::Index t, Eigen::Index H) {
    for (auto l : S)
        if (l < t || l > H) throw DataError("bound: S must lie inside {t..H}");
}

inline BoundReport bound_from_blocks(const DBlocks& d, const ForwardTrace& trace,
                                     const DenseMatrix& Y, const std::vector<Eigen::Index>& S,
                                     CutoffCriterion c) {
    BoundReport r;
    r.S = S;
    r.L_value = loss(trace, Y);
    r.regression_term = regression_optimum(concat_phi(trace, S), Y, c);

    std::optional<ProjectorBasis> pre;
    if (!S.empty()) {
        pre = column_space_basis(concat_phi_bar(trace, S, Y.cols()), c);
    }
    // layers 1..H only; the (H+1) block is not part of the bound
    const QDecomposition q = decompose_contributions(d, Y, pre, c, /*include_last_block=*/false);
    r.improvement_term = q.total();
    r.bound = r.regression_term - r.improvement_term;
    return r;
}

}  // namespace detail

inline BoundReport theorem2_bound(const ForwardTrace& trace, const ActivationTensor& patterns,
                                  const NetworkParams& params, const DenseMatrix& Y,
                                  const StructureCert& cert, const std::vector<Eigen::Index>& S,
                                  CutoffCriterion c) {
    if (cert.kind != StructureKind::Weak)
        throw DataError("theorem2_bound: strong certificates route to corollary2_bound");
    detail::check_S(S, cert.t, params.arch.depth());
    const DBlocks d = assemble_D(trace, patterns, params);
    return detail::bound_from_blocks(d, trace, Y, S, c);
}

// Same pipeline with restricted blocks: for layers l >= t+2 and units
// outside S^(l), the block only sees the Phi^(l-1) columns outside
// S^(l-1) (the removed edges are fixed to zero and carry no derivative).
inline BoundReport corollary1_bound(const ForwardTrace& trace, const ActivationTensor& patterns,
                                    const NetworkParams& params, const DenseMatrix& Y,
                                    const StructureCert& cert, const std::vector<Eigen::Index>& S,
                                    CutoffCriterion c) {
    const Eigen::Index H = params.arch.depth();
    detail::check_S(S, cert.t, H);

    DBlocks d = assemble_D(trace, patterns, params);
    for (Eigen::Index l = cert.t + 2; l <= H; ++l) {
        const auto& s_l = cert.set_for_layer(l);
        const auto& s_prev = cert.set_for_layer(l - 1);
        std::vector<bool> in_s_l(static_cast<std::size_t>(params.arch.layer_width(l)), false);
        for (auto k : s_l) in_s_l[static_cast<std::size_t>(k)] = true;
        std::vector<bool> in_s_prev(static_cast<std::size_t>(params.arch.layer_width(l - 1)),
                                    false);
        for (auto k : s_prev) in_s_prev[static_cast<std::size_t>(k)] = true;
        std::vector<Eigen::Index> complement_cols;
        for (Eigen::Index j = 0; j < params.arch.layer_width(l - 1); ++j)
            if (!in_s_prev[static_cast<std::size_t>(j)]) complement_cols.push_back(j);

        for (Eigen::Index k = 0; k < params.arch.layer_width(l); ++k) {
            if (in_s_l[static_cast<std::size_t>(k)]) continue;
            d.blocks[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(k)] =
                assemble_block(trace, patterns, params, l, k, complement_cols);
        }
    }
    return detail::bound_from_blocks(d, trace, Y, S, c);
}

// The strong-structure variant: S may only contain the endpoints t and H;
// the blocks are the unmodified ones of the main bound.
inline BoundReport corollary2_bound(const ForwardTrace& trace, const ActivationTensor& patterns,
                                    const NetworkParams& params, const DenseMatrix& Y,
                                    const StructureCert& cert, const std::vector<Eigen::Index>& S,
                                    CutoffCriterion c) {
    if (cert.kind != StructureKind::Strong)
        throw DataError("corollary2_bound: requires a strong certificate");
    const Eigen::Index H = params.arch.depth();
    for (auto l : S)
        if (l != cert.t && l != H)
            throw DataError("corollary2_bound: S may only contain t and H");
    const DBlocks d = assemble_D(trace, patterns, params);
    return detail::bound_from_blocks(d, trace, Y, S, c);
}

}  // namespace lossmin

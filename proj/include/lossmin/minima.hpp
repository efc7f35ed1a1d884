#pragma once

// Closed-form loss at differentiable local minima: assembly of the
// Jacobian column blocks D_k^(l), the sequential block-projection
// decomposition, and J computed both directly (one concatenated
// projector) and through the per-block decomposition.

#include "lossmin/network.hpp"
#include "lossmin/projector.hpp"

#include <json.hpp>

#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace lossmin {

// Default cap on the dense D assembly, as an entry-count estimate.
constexpr std::size_t kDefaultDBytesCap = std::size_t{1} << 30;  // 1 GiB

class SizeCapExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DBlocks {
    // blocks[l-1][k-1] = D_k^(l), shape (m*d_y) x d_{l-1}, for l = 1..H.
    std::vector<std::vector<DenseMatrix>> blocks;
    // D_1^(H+1) = I_{d_y} (x) Phi^(H), shape (m*d_y) x (d_H*d_y).
    DenseMatrix last_block;
    Eigen::Index ambient_dim = 0;  // m * d_y

    // [D^(1) ... D^(H) D_1^(H+1)] as one dense matrix.
    DenseMatrix concatenated() const {
        Eigen::Index cols = last_block.cols();
        for (const auto& layer : blocks)
            for (const auto& b : layer) cols += b.cols();
        DenseMatrix out(ambient_dim, cols);
        Eigen::Index at = 0;
        for (const auto& layer : blocks)
            for (const auto& b : layer) {
                out.middleCols(at, b.cols()) = b;
                at += b.cols();
            }
        out.middleCols(at, last_block.cols()) = last_block;
        return out;
    }
};

namespace detail {

// Applies the masked weight chain of layers first_layer+1 .. H+1 to an
// m x d_{first_layer} matrix: Z -> (Lambda^(l) o Z) W^(l+1), folded up to
// the output layer. This is the F^(H+1) ... F^(first_layer+1) action of
// the vec identity, evaluated without forming Kronecker factors.
inline DenseMatrix apply_back_chain(const NetworkParams& params, const ActivationTensor& patterns,
                                    Eigen::Index first_layer, DenseMatrix z) {
    const Eigen::Index H = params.arch.depth();
    for (Eigen::Index l = first_layer; l <= H; ++l) {
        z = z.cwiseProduct(patterns.lambda[static_cast<std::size_t>(l - 1)]) *
            params.weights[static_cast<std::size_t>(l)];
    }
    return z;
}

inline std::size_t d_bytes_estimate(const NetworkParams& params, Eigen::Index m) {
    const Eigen::Index H = params.arch.depth();
    std::size_t cols = 0;
    for (Eigen::Index l = 1; l <= H + 1; ++l)
        cols += static_cast<std::size_t>(params.arch.layer_width(l - 1)) *
                static_cast<std::size_t>(params.arch.layer_width(l));
    return cols * static_cast<std::size_t>(m) *
           static_cast<std::size_t>(params.arch.output_dim) * sizeof(double);
}

}  // namespace detail

// D_k^(l) restricted to a subset of the columns of Phi^(l-1) (all columns
// when `column_subset` is empty). Column j of the result is the chain of
// masked weight multiplications applied to Phi^(l-1)_{.,j} injected at
// unit k of layer l, vectorized over the m x d_y output.
inline DenseMatrix assemble_block(const ForwardTrace& trace, const ActivationTensor& patterns,
                                  const NetworkParams& params, Eigen::Index l, Eigen::Index k,
                                  const std::vector<Eigen::Index>& column_subset = {}) {
    const Eigen::Index m = trace.input().rows();
    const Eigen::Index d_y = params.arch.output_dim;
    const DenseMatrix& phi_prev = trace.phi[static_cast<std::size_t>(l - 1)];

    std::vector<Eigen::Index> cols;
    if (column_subset.empty()) {
        cols.resize(static_cast<std::size_t>(phi_prev.cols()));
        std::iota(cols.begin(), cols.end(), Eigen::Index{0});
    } else {
        cols = column_subset;
    }

    DenseMatrix out(m * d_y, static_cast<Eigen::Index>(cols.size()));
    const Vector mask = patterns.lambda[static_cast<std::size_t>(l - 1)].col(k);
    const auto w_out = params.weights[static_cast<std::size_t>(l)].row(k);  // W^(l+1)_{k,.}
    for (std::size_t jj = 0; jj < cols.size(); ++jj) {
        // inject at unit k: (lambda^{l,k} o Phi^(l-1)_{.,j}) W^(l+1)_{k,.}
        DenseMatrix z = (mask.cwiseProduct(phi_prev.col(cols[jj]))) * w_out;
        z = detail::apply_back_chain(params, patterns, l + 1, std::move(z));
        out.col(static_cast<Eigen::Index>(jj)) = vectorize(z);
    }
    return out;
}

inline DBlocks assemble_D(const ForwardTrace& trace, const ActivationTensor& patterns,
                          const NetworkParams& params,
                          std::size_t bytes_cap = kDefaultDBytesCap) {
    const Eigen::Index m = trace.input().rows();
    const Eigen::Index H = params.arch.depth();
    const Eigen::Index d_y = params.arch.output_dim;

    const std::size_t estimate = detail::d_bytes_estimate(params, m);
    if (estimate > bytes_cap) {
        throw SizeCapExceeded("assemble_D: dense D needs about " + std::to_string(estimate) +
                              " bytes, above the cap of " + std::to_string(bytes_cap) +
                              "; shrink the network or the sample count");
    }

    DBlocks d;
    d.ambient_dim = m * d_y;
    d.blocks.resize(static_cast<std::size_t>(H));
    for (Eigen::Index l = 1; l <= H; ++l) {
        const Eigen::Index d_l = params.arch.layer_width(l);
        auto& layer = d.blocks[static_cast<std::size_t>(l - 1)];
        layer.reserve(static_cast<std::size_t>(d_l));
        for (Eigen::Index k = 0; k < d_l; ++k)
            layer.push_back(assemble_block(trace, patterns, params, l, k));
    }

    // D_1^(H+1) = I_{d_y} (x) Phi^(H)
    const DenseMatrix& phi_H = trace.phi[static_cast<std::size_t>(H)];
    d.last_block = DenseMatrix::Zero(m * d_y, phi_H.cols() * d_y);
    for (Eigen::Index j = 0; j < d_y; ++j)
        d.last_block.block(j * m, j * phi_H.cols(), m, phi_H.cols()) = phi_H;
    return d;
}

struct Contribution {
    Eigen::Index layer = 0;  // 1..H, or H+1 for the final block
    Eigen::Index unit = 0;   // 1-based
    double value = 0.0;
};

struct QDecomposition {
    ProjectorBasis running_basis;
    std::vector<Contribution> contributions;

    double total() const {
        double s = 0.0;
        for (const auto& c : contributions) s += c.value;
        return s;
    }
};

namespace detail {

inline void decompose_one_block(QDecomposition& q, const DenseMatrix& block,
                                const std::optional<ProjectorBasis>& pre_projector,
                                const Vector& vec_y, CutoffCriterion c, Eigen::Index layer,
                                Eigen::Index unit) {
    DenseMatrix b = pre_projector ? project_null(*pre_projector, block) : block;
    // N_k^(l) applied implicitly: new directions orthogonal to everything
    // already in the running basis.
    const ProjectorBasis before = q.running_basis;
    q.running_basis = extend_basis(q.running_basis, b, c);
    const Eigen::Index fresh = q.running_basis.rank() - before.rank();
    double contrib = 0.0;
    if (fresh > 0) {
        const auto new_cols = q.running_basis.basis.rightCols(fresh);
        contrib = 0.5 * (new_cols.transpose() * vec_y).squaredNorm();
    }
    q.contributions.push_back({layer, unit + 1, contrib});
}

}  // namespace detail

// Sequential block projection in the fixed order (layer 1 unit 1 ...
// layer H unit d_H, then the (H+1) block when `include_last_block`).
// Each pre-projected block is orthogonalized against the running basis;
// the recorded value is half the squared norm of vec(Y) captured by the
// block's fresh directions.
inline QDecomposition decompose_contributions(const DBlocks& d, const DenseMatrix& Y,
                                              const std::optional<ProjectorBasis>& pre_projector,
                                              CutoffCriterion c, bool include_last_block = true) {
    const Vector vec_y = vectorize(Y);
    if (vec_y.size() != d.ambient_dim) throw DataError("decompose: Y shape mismatch");
    if (pre_projector && pre_projector->ambient_dim != d.ambient_dim)
        throw DataError("decompose: pre-projector ambient dim mismatch");

    QDecomposition q;
    q.running_basis.ambient_dim = d.ambient_dim;
    q.running_basis.basis = DenseMatrix(d.ambient_dim, 0);
    q.running_basis.criterion = c;

    for (std::size_t l = 0; l < d.blocks.size(); ++l)
        for (std::size_t k = 0; k < d.blocks[l].size(); ++k)
            detail::decompose_one_block(q, d.blocks[l][k], pre_projector, vec_y, c,
                                        static_cast<Eigen::Index>(l + 1),
                                        static_cast<Eigen::Index>(k));
    if (include_last_block) {
        detail::decompose_one_block(q, d.last_block, pre_projector, vec_y, c,
                                    static_cast<Eigen::Index>(d.blocks.size() + 1), 0);
    }
    return q;
}

struct MinimaReport {
    double L_value = 0.0;
    double J_direct = 0.0;
    double J_decomposed = 0.0;
    double grad_norm = 0.0;
    bool differentiable = false;
    std::vector<Contribution> contributions;
};

inline nlohmann::json to_json(const MinimaReport& r) {
    nlohmann::json j;
    j["L"] = r.L_value;
    j["J_direct"] = r.J_direct;
    j["J_decomposed"] = r.J_decomposed;
    j["grad_norm"] = r.grad_norm;
    j["differentiable"] = r.differentiable;
    nlohmann::json cs = nlohmann::json::array();
    for (const auto& c : r.contributions) cs.push_back({c.layer, c.unit, c.value});
    j["contributions"] = cs;
    return j;
}

// J by both routes: the single concatenated projector of [D D_1^(H+1)]
// (the numerically preferred form) and the per-block decomposition.
inline MinimaReport compute_J(const ForwardTrace& trace, const ActivationTensor& patterns,
                              const NetworkParams& params, const DenseMatrix& Y,
                              CutoffCriterion c, std::size_t bytes_cap = kDefaultDBytesCap) {
    const DBlocks d = assemble_D(trace, patterns, params, bytes_cap);
    const Vector vec_y = vectorize(Y);
    const double half_y2 = 0.5 * vec_y.squaredNorm();

    MinimaReport r;
    r.L_value = loss(trace, Y);
    r.grad_norm = std::numeric_limits<double>::quiet_NaN();  // caller may fill in
    r.differentiable = patterns.exact_zero_hits == 0;

    const ProjectorBasis full = column_space_basis(d.concatenated(), c);
    r.J_direct = half_y2 - 0.5 * project(full, vec_y).squaredNorm();

    const QDecomposition q = decompose_contributions(d, Y, std::nullopt, c);
    r.J_decomposed = half_y2 - q.total();
    r.contributions = q.contributions;
    return r;
}

inline MinimaReport compute_J(const NetworkParams& params, const DenseMatrix& X,
                              const DenseMatrix& Y, CutoffCriterion c,
                              double eps_act = kDefaultEpsAct,
                              std::size_t bytes_cap = kDefaultDBytesCap) {
    const ForwardTrace t = forward(params, X);
    const ActivationTensor pat = activation_patterns(t, params, eps_act);
    MinimaReport r = compute_J(t, pat, params, Y, c, bytes_cap);
    r.grad_norm = gradient(params, X, Y, eps_act).norm();
    return r;
}

}  // namespace lossmin

#include "lossmin/minima.hpp"
#include "lossmin/trainer.hpp"

#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

using namespace lossmin;

namespace {

DenseMatrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    DenseMatrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal(rng);
    return m;
}

// Kronecker product, used only as an independent oracle.
DenseMatrix kron(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

constexpr auto kPress = CutoffCriterion::PressEtAl;

}  // namespace

TEST_CASE("one-hidden-layer scalar-output blocks: D_k = W2_k * diag(lambda_k) X") {
    const NetworkArch arch(3, 1, {4}, ActivationKind::relu());
    const NetworkParams p = init_params(arch, 1);
    const DenseMatrix X = random_matrix(8, 3, 2);
    const ForwardTrace t = forward(p, X);
    const ActivationTensor pat = activation_patterns(t, p);
    const DBlocks d = assemble_D(t, pat, p);

    for (Eigen::Index k = 0; k < 4; ++k) {
        const DenseMatrix expected =
            p.weights[1](k, 0) * (pat.lambda[0].col(k).asDiagonal() * X);
        REQUIRE((d.blocks[0][static_cast<std::size_t>(k)] - expected).norm() < 1e-12);
    }
    REQUIRE((d.last_block - t.phi[1]).norm() < 1e-12);  // I_1 (x) Phi^(1)
}

TEST_CASE("deep linear blocks match the explicit Kronecker-chain oracle") {
    // All lambda = 1: D_k^(l) for every l, k is
    // (W^(l+1)_{k,.} W^(l+2) ... W^(H+1))^T (x) Phi^(l-1), verified by
    // brute-force Kronecker evaluation.
    const NetworkArch arch(3, 2, {3, 4}, ActivationKind::linear());
    const NetworkParams p = init_params(arch, 10);
    const DenseMatrix X = random_matrix(6, 3, 11);
    const ForwardTrace t = forward(p, X);
    const ActivationTensor pat = activation_patterns(t, p);
    const DBlocks d = assemble_D(t, pat, p);
    const Eigen::Index H = arch.depth();

    for (Eigen::Index l = 1; l <= H; ++l) {
        const DenseMatrix& phi_prev = t.phi[static_cast<std::size_t>(l - 1)];
        for (Eigen::Index k = 0; k < arch.layer_width(l); ++k) {
            DenseMatrix chain = p.weights[static_cast<std::size_t>(l)].row(k);  // 1 x d_{l+1}
            for (Eigen::Index l2 = l + 1; l2 <= H; ++l2)
                chain = chain * p.weights[static_cast<std::size_t>(l2)];
            // vec identity: vec(phi_prev_col w_chain) = (chain^T (x) I_m) phi_col
            const DenseMatrix expected = kron(chain.transpose(), phi_prev);
            REQUIRE((d.blocks[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(k)] -
                     expected)
                        .norm() < 1e-10 * (1.0 + expected.norm()));
        }
    }
}

TEST_CASE("assembled blocks agree with the finite-difference Jacobian") {
    const NetworkArch arch(2, 2, {3, 2}, ActivationKind::relu());
    NetworkParams p = init_params(arch, 20);
    const DenseMatrix X = random_matrix(7, 2, 21);
    const ForwardTrace t = forward(p, X);
    const ActivationTensor pat = activation_patterns(t, p);
    REQUIRE(pat.exact_zero_hits == 0);
    REQUIRE(pat.min_abs_preactivation > 1e-6);  // safely away from kinks
    const DBlocks d = assemble_D(t, pat, p);

    const double h = 1e-6;
    for (Eigen::Index l = 1; l <= arch.depth(); ++l) {
        const Eigen::Index d_prev = arch.layer_width(l - 1);
        for (Eigen::Index k = 0; k < arch.layer_width(l); ++k) {
            const DenseMatrix& block =
                d.blocks[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(k)];
            for (Eigen::Index j = 0; j < d_prev; ++j) {
                auto& w = p.weights[static_cast<std::size_t>(l - 1)](j, k);
                const double saved = w;
                w = saved + h;
                const Vector up = vectorize(forward(p, X).output());
                w = saved - h;
                const Vector dn = vectorize(forward(p, X).output());
                w = saved;
                const Vector fd = (up - dn) / (2.0 * h);
                REQUIRE((fd - block.col(j)).norm() < 1e-4 * (1.0 + block.col(j).norm()));
            }
        }
    }
}

TEST_CASE("assemble_D refuses above the memory cap") {
    const NetworkArch arch(4, 2, {8}, ActivationKind::relu());
    const NetworkParams p = init_params(arch, 30);
    const DenseMatrix X = random_matrix(16, 4, 31);
    const ForwardTrace t = forward(p, X);
    const ActivationTensor pat = activation_patterns(t, p);
    REQUIRE_THROWS_AS(assemble_D(t, pat, p, /*bytes_cap=*/64), SizeCapExceeded);
    REQUIRE_NOTHROW(assemble_D(t, pat, p));
}

TEST_CASE("decompose_contributions trivial cases") {
    SECTION("zero target gives zero contributions") {
        const NetworkArch arch(2, 1, {2}, ActivationKind::relu());
        const NetworkParams p = init_params(arch, 40);
        const DenseMatrix X = random_matrix(5, 2, 41);
        const ForwardTrace t = forward(p, X);
        const ActivationTensor pat = activation_patterns(t, p);
        const DBlocks d = assemble_D(t, pat, p);
        const QDecomposition q =
            decompose_contributions(d, DenseMatrix::Zero(5, 1), std::nullopt, kPress);
        REQUIRE(q.total() == 0.0);
    }
    SECTION("single block spanning Y captures half its squared norm") {
        const Vector y = random_matrix(6, 1, 42).col(0);
        DBlocks d;
        d.ambient_dim = 6;
        d.blocks.resize(1);
        d.blocks[0].push_back(y);
        d.last_block = DenseMatrix(6, 0);
        const QDecomposition q =
            decompose_contributions(d, DenseMatrix(y), std::nullopt, kPress,
                                    /*include_last_block=*/false);
        REQUIRE(q.total() == Catch::Approx(0.5 * y.squaredNorm()));
    }
}

TEST_CASE("sequential decomposition equals the one-shot concatenated projection") {
    // m=5, H=1, d=2, d_x=2 and a handful of larger random instances.
    struct Case {
        Eigen::Index m, d_x, d_y;
        std::vector<Eigen::Index> widths;
    };
    const Case cases[] = {{5, 2, 1, {2}}, {9, 3, 2, {4, 3}}, {12, 2, 1, {3, 3, 2}}};
    std::uint64_t seed = 50;
    for (const auto& c : cases) {
        for (auto act : {ActivationKind::relu(), ActivationKind::abs()}) {
            const NetworkArch arch(c.d_x, c.d_y, c.widths, act);
            const NetworkParams p = init_params(arch, seed++);
            const DenseMatrix X = random_matrix(c.m, c.d_x, seed++);
            const DenseMatrix Y = random_matrix(c.m, c.d_y, seed++);
            const ForwardTrace t = forward(p, X);
            const ActivationTensor pat = activation_patterns(t, p);
            const DBlocks d = assemble_D(t, pat, p);

            const QDecomposition q = decompose_contributions(d, Y, std::nullopt, kPress);
            const ProjectorBasis full = column_space_basis(d.concatenated(), kPress);
            const double oneshot = 0.5 * project(full, vectorize(Y)).squaredNorm();
            REQUIRE(std::abs(q.total() - oneshot) < 1e-9 * (1.0 + oneshot));
        }
    }
}

TEST_CASE("contributions are nonnegative and sum below half the target norm") {
    const NetworkArch arch(3, 2, {4, 3}, ActivationKind::relu());
    const NetworkParams p = init_params(arch, 60);
    const DenseMatrix X = random_matrix(10, 3, 61);
    const DenseMatrix Y = random_matrix(10, 2, 62);
    const ForwardTrace t = forward(p, X);
    const ActivationTensor pat = activation_patterns(t, p);
    const DBlocks d = assemble_D(t, pat, p);
    const QDecomposition q = decompose_contributions(d, Y, std::nullopt, kPress);
    double running = 0.0;
    for (const auto& c : q.contributions) {
        REQUIRE(c.value >= 0.0);
        running += c.value;
    }
    REQUIRE(running <= 0.5 * Y.squaredNorm() + 1e-8);
}

TEST_CASE("compute_J basic values and invariants") {
    SECTION("zero target") {
        const NetworkArch arch(2, 1, {3}, ActivationKind::relu());
        const NetworkParams p = init_params(arch, 70);
        const DenseMatrix X = random_matrix(6, 2, 71);
        const MinimaReport r = compute_J(p, X, DenseMatrix::Zero(6, 1), kPress);
        REQUIRE(r.J_direct == 0.0);
        REQUIRE(r.J_decomposed == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("full row rank gives J = 0") {
        // wide net, tiny sample: [D D_1^(H+1)] spans all of R^(m d_y)
        const NetworkArch arch(2, 1, {8}, ActivationKind::relu());
        const NetworkParams p = init_params(arch, 72);
        const DenseMatrix X = random_matrix(3, 2, 73);
        const DenseMatrix Y = random_matrix(3, 1, 74);
        const ForwardTrace t = forward(p, X);
        const ActivationTensor pat = activation_patterns(t, p);
        const DBlocks d = assemble_D(t, pat, p);
        const ProjectorBasis full = column_space_basis(d.concatenated(), kPress);
        REQUIRE(full.rank() == 3);  // precondition: full row rank
        const MinimaReport r = compute_J(t, pat, p, Y, kPress);
        REQUIRE(std::abs(r.J_direct) < 1e-10);
    }
    SECTION("bound sandwich and direct/decomposed agreement on random points") {
        std::uint64_t seed = 80;
        for (int i = 0; i < 25; ++i) {
            const NetworkArch arch(3, 2, {4, 3}, ActivationKind::relu());
            const NetworkParams p = init_params(arch, seed++);
            const DenseMatrix X = random_matrix(9, 3, seed++);
            const DenseMatrix Y = random_matrix(9, 2, seed++);
            const MinimaReport r = compute_J(p, X, Y, kPress);
            const double half_y2 = 0.5 * Y.squaredNorm();
            REQUIRE(r.J_direct >= -1e-12);
            REQUIRE(r.J_direct <= half_y2 + 1e-8);
            REQUIRE(std::abs(r.J_direct - r.J_decomposed) <= 1e-6 * (1.0 + half_y2));
        }
    }
}

TEST_CASE("the closed form equals the loss at a descended differentiable point") {
    const NetworkArch arch(2, 1, {3}, ActivationKind::relu());
    // scan seeds; keep the first differentiable tight stationary point
    for (std::uint64_t s = 0; s < 40; ++s) {
        const auto prob = testsupport::make_stationary_problem(arch, 10, 900 + s);
        if (!prob) continue;
        const DescentResult d =
            descend_to_stationarity(prob->params, prob->X, prob->Y, 1e-9, 2000);
        if (d.report.grad_norm > 1e-9 || !d.report.differentiable) continue;
        const MinimaReport r = compute_J(d.params, prob->X, prob->Y, kPress);
        REQUIRE(std::abs(r.L_value - r.J_direct) <= 1e-6 * (1.0 + r.L_value));
        return;
    }
    FAIL("no differentiable stationary point reached across 40 seeds");
}

TEST_CASE("exact stationary points of deep linear nets give agreement within 1e-8") {
    const NetworkArch arch(3, 1, {4, 4}, ActivationKind::linear());
    const NetworkParams p0 = init_params(arch, 100);
    const DenseMatrix X = random_matrix(15, 3, 101);
    const DenseMatrix Y = random_matrix(15, 1, 102);
    const DescentResult d = descend_to_stationarity(p0, X, Y, 1e-12, 200000);
    REQUIRE(d.report.grad_norm <= 1e-10);
    const MinimaReport r = compute_J(d.params, X, Y, kPress);
    REQUIRE(std::abs(r.L_value - r.J_direct) < 1e-8 * (1.0 + r.L_value));
}

TEST_CASE("J is invariant under block order permutation") {
    // individual contributions depend on the order; the total does not
    const NetworkArch arch(3, 1, {3, 3}, ActivationKind::relu());
    const NetworkParams p = init_params(arch, 110);
    const DenseMatrix X = random_matrix(8, 3, 111);
    const DenseMatrix Y = random_matrix(8, 1, 112);
    const ForwardTrace t = forward(p, X);
    const ActivationTensor pat = activation_patterns(t, p);
    const DBlocks d = assemble_D(t, pat, p);

    const QDecomposition q = decompose_contributions(d, Y, std::nullopt, kPress);

    DBlocks shuffled = d;
    std::mt19937_64 rng(113);
    std::vector<DenseMatrix> flat;
    for (auto& layer : shuffled.blocks)
        for (auto& b : layer) flat.push_back(b);
    std::shuffle(flat.begin(), flat.end(), rng);
    std::size_t at = 0;
    for (auto& layer : shuffled.blocks)
        for (auto& b : layer) b = flat[at++];

    const QDecomposition q2 = decompose_contributions(shuffled, Y, std::nullopt, kPress);
    REQUIRE(std::abs(q.total() - q2.total()) < 1e-8 * (1.0 + q.total()));
}

TEST_CASE("monotone refinement: appending blocks never decreases the captured norm") {
    const NetworkArch arch(3, 1, {3}, ActivationKind::relu());
    const NetworkParams p = init_params(arch, 120);
    const DenseMatrix X = random_matrix(8, 3, 121);
    const DenseMatrix Y = random_matrix(8, 1, 122);
    const ForwardTrace t = forward(p, X);
    const ActivationTensor pat = activation_patterns(t, p);
    const DBlocks d = assemble_D(t, pat, p);
    const QDecomposition with_last = decompose_contributions(d, Y, std::nullopt, kPress, true);
    const QDecomposition without = decompose_contributions(d, Y, std::nullopt, kPress, false);
    REQUIRE(with_last.total() >= without.total() - 1e-12);
}

TEST_CASE("MinimaReport serialization carries every field") {
    MinimaReport r;
    r.L_value = 1.5;
    r.J_direct = 1.25;
    r.J_decomposed = 1.25;
    r.grad_norm = 1e-9;
    r.differentiable = true;
    r.contributions = {{1, 1, 0.5}, {2, 1, 0.25}};
    const auto j = to_json(r);
    REQUIRE(j["L"] == 1.5);
    REQUIRE(j["J_direct"] == 1.25);
    REQUIRE(j["differentiable"] == true);
    REQUIRE(j["contributions"].size() == 2);
    REQUIRE(j["contributions"][0][2] == 0.5);
}

#pragma once

// SVD-backed numerical rank and implicit orthogonal projectors.
//
// Projectors are never materialized as ambient x ambient matrices; a
// column space is carried as a thin orthonormal basis Q and applied as
// Q (Q^T v), with the null-space projector v - Q (Q^T v).

#include "lossmin/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace lossmin {

enum class CutoffCriterion { PressEtAl, GolubVanLoan, Lapack };

inline const char* to_string(CutoffCriterion c) {
    switch (c) {
        case CutoffCriterion::PressEtAl: return "press";
        case CutoffCriterion::GolubVanLoan: return "golub";
        case CutoffCriterion::Lapack: return "lapack";
    }
    return "?";
}

// Singular-value cutoff for a d' x d matrix. `sigma_max` and `inf_norm`
// are those of the matrix whose scale anchors the truncation (normally
// the matrix being factored itself).
inline double singular_value_cutoff(CutoffCriterion c, Eigen::Index rows, Eigen::Index cols,
                                    double sigma_max, double inf_norm) {
    const double eps = std::numeric_limits<double>::epsilon();
    switch (c) {
        case CutoffCriterion::PressEtAl:
            return 0.5 * sigma_max * eps * std::sqrt(static_cast<double>(rows + cols + 1));
        case CutoffCriterion::GolubVanLoan:
            return 0.5 * inf_norm * eps;
        case CutoffCriterion::Lapack:
            return sigma_max * eps;
    }
    return 0.0;
}

inline double infinity_norm(const DenseMatrix& m) {
    if (m.size() == 0) return 0.0;
    return m.cwiseAbs().rowwise().sum().maxCoeff();
}

struct RankResult {
    Eigen::Index rank = 0;
    double cutoff = 0.0;
};

inline RankResult numerical_rank(const DenseMatrix& m, CutoffCriterion c) {
    if (m.size() == 0) return {0, 0.0};
    Eigen::BDCSVD<DenseMatrix> svd(m);
    const auto& sv = svd.singularValues();
    const double cutoff = singular_value_cutoff(c, m.rows(), m.cols(), sv(0), infinity_norm(m));
    Eigen::Index rank = 0;
    while (rank < sv.size() && sv(rank) > cutoff) ++rank;
    return {rank, cutoff};
}

// Thin orthonormal basis of a column space together with the truncation
// metadata that produced it.
struct ProjectorBasis {
    Eigen::Index ambient_dim = 0;
    DenseMatrix basis;  // ambient_dim x rank, orthonormal columns
    double cutoff_used = 0.0;
    CutoffCriterion criterion = CutoffCriterion::PressEtAl;
    std::vector<double> discarded_singular_values;

    Eigen::Index rank() const { return basis.cols(); }
};

// Orthonormal basis of the numerical column space of M at the criterion's
// rank. `scale_sigma_max` / `scale_inf_norm`, when nonnegative, anchor the
// cutoff to a different matrix than M (used when M is a projected residual
// whose own scale says nothing about which directions are noise).
inline ProjectorBasis column_space_basis(const DenseMatrix& m, CutoffCriterion c,
                                         double scale_sigma_max = -1.0,
                                         double scale_inf_norm = -1.0) {
    ProjectorBasis b;
    b.ambient_dim = m.rows();
    b.criterion = c;
    if (m.size() == 0) {
        b.basis = DenseMatrix(m.rows(), 0);
        return b;
    }
    Eigen::BDCSVD<DenseMatrix> svd(m, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    const double sigma_max = scale_sigma_max >= 0.0 ? scale_sigma_max : sv(0);
    const double inf_norm = scale_inf_norm >= 0.0 ? scale_inf_norm : infinity_norm(m);
    b.cutoff_used = singular_value_cutoff(c, m.rows(), m.cols(), sigma_max, inf_norm);
    Eigen::Index rank = 0;
    while (rank < sv.size() && sv(rank) > b.cutoff_used) ++rank;
    b.basis = svd.matrixU().leftCols(rank);
    b.discarded_singular_values.assign(sv.data() + rank, sv.data() + sv.size());
    return b;
}

inline Vector project(const ProjectorBasis& b, const Vector& v) {
    if (v.size() != b.ambient_dim) throw DataError("project: dimension mismatch");
    if (b.rank() == 0) return Vector::Zero(v.size());
    return b.basis * (b.basis.transpose() * v);
}

inline Vector project_null(const ProjectorBasis& b, const Vector& v) {
    if (v.size() != b.ambient_dim) throw DataError("project_null: dimension mismatch");
    if (b.rank() == 0) return v;
    return v - b.basis * (b.basis.transpose() * v);
}

// Matrix forms, applied column-wise.
inline DenseMatrix project(const ProjectorBasis& b, const DenseMatrix& m) {
    if (m.rows() != b.ambient_dim) throw DataError("project: dimension mismatch");
    if (b.rank() == 0) return DenseMatrix::Zero(m.rows(), m.cols());
    return b.basis * (b.basis.transpose() * m);
}

inline DenseMatrix project_null(const ProjectorBasis& b, const DenseMatrix& m) {
    if (m.rows() != b.ambient_dim) throw DataError("project_null: dimension mismatch");
    if (b.rank() == 0) return m;
    return m - b.basis * (b.basis.transpose() * m);
}

// Extends `b` to span(b u columns of newBlock). The new directions are the
// orthogonalized residual P_N[b] newBlock, with one re-orthogonalization
// pass; truncation is anchored to the scale of newBlock itself, so columns
// already inside span(b) contribute nothing. The old basis columns stay as
// a prefix of the result.
inline ProjectorBasis extend_basis(const ProjectorBasis& b, const DenseMatrix& newBlock,
                                   CutoffCriterion c) {
    if (newBlock.rows() != b.ambient_dim) throw DataError("extend_basis: dimension mismatch");
    if (newBlock.size() == 0) return b;

    DenseMatrix residual = project_null(b, newBlock);
    residual = project_null(b, residual);  // re-orthogonalization pass

    // The residual of the projection carries rounding noise of size roughly
    // eps * ||newBlock|| in every ambient direction, including directions
    // outside span(b); the bare cutoff sits at the same scale and would let
    // noise through as spurious unit basis vectors. A fixed safety factor
    // lifts the truncation well above that floor while staying many orders
    // below any genuine direction.
    constexpr double kResidualNoiseSafety = 64.0;
    const double sigma_max = newBlock.size() == 0 ? 0.0 : newBlock.operatorNorm();
    ProjectorBasis fresh =
        column_space_basis(residual, c, kResidualNoiseSafety * sigma_max,
                           kResidualNoiseSafety * infinity_norm(newBlock));

    // Residual directions whose singular value sits near the rounding floor
    // are unit vectors only because normalization amplified projection
    // noise; they can carry an O(1) component inside span(b). One more
    // Gram-Schmidt pass at the unit-vector level exposes those: a genuine
    // new direction keeps essentially all of its mass, a noise direction
    // loses most of it and is dropped.
    if (b.rank() > 0 && fresh.rank() > 0) {
        DenseMatrix kept(b.ambient_dim, fresh.rank());
        Eigen::Index nk = 0;
        for (Eigen::Index j = 0; j < fresh.rank(); ++j) {
            Vector q = fresh.basis.col(j);
            q -= b.basis * (b.basis.transpose() * q);
            if (nk > 0) q -= kept.leftCols(nk) * (kept.leftCols(nk).transpose() * q);
            const double n = q.norm();
            if (n >= 0.5) kept.col(nk++) = q / n;
        }
        fresh.basis = kept.leftCols(nk).eval();
    }

    ProjectorBasis out;
    out.ambient_dim = b.ambient_dim;
    out.criterion = c;
    out.cutoff_used = fresh.cutoff_used;
    out.discarded_singular_values = fresh.discarded_singular_values;
    out.basis.resize(b.ambient_dim, b.rank() + fresh.rank());
    out.basis.leftCols(b.rank()) = b.basis;
    out.basis.rightCols(fresh.rank()) = fresh.basis;
    return out;
}

}  // namespace lossmin

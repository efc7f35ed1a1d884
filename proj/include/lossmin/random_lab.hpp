#pragma once

// Monte Carlo checks of the probabilistic claims: the shallow local
// minimum loss in terms of the pattern-masked design matrix, its rank
// dichotomy across the under/overparameterized regimes, and the
// chi-square concentration tails.

#include "lossmin/projector.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace lossmin {

enum class Regime { Underparam, Overparam };

inline const char* to_string(Regime r) {
    return r == Regime::Underparam ? "underparam" : "overparam";
}

inline DenseMatrix sample_gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    if (rows < 1 || cols < 1) throw DataError("sample_gaussian: sizes must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    DenseMatrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
    return m;
}

// Fair-coin activation patterns: {0,1} entries (ReLU-like) or {-1,1}
// entries (abs-like) when `signed_pattern` is set.
inline DenseMatrix sample_pattern(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                                  bool signed_pattern = false) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    DenseMatrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) {
            const bool b = coin(rng);
            m(i, j) = signed_pattern ? (b ? 1.0 : -1.0) : (b ? 1.0 : 0.0);
        }
    return m;
}

// D~ = [diag(Lambda^1) X ... diag(Lambda^d) X], m x (d * d_x).
inline DenseMatrix build_Dtilde(const DenseMatrix& pattern, const DenseMatrix& X) {
    if (pattern.rows() != X.rows()) throw DataError("build_Dtilde: row mismatch");
    const Eigen::Index m = X.rows();
    const Eigen::Index d_x = X.cols();
    const Eigen::Index d = pattern.cols();
    DenseMatrix out(m, d * d_x);
    for (Eigen::Index k = 0; k < d; ++k)
        out.middleCols(k * d_x, d_x) = pattern.col(k).asDiagonal() * X;
    return out;
}

// Local-minimum loss of the shallow scalar-output network with frozen
// patterns: half the squared residual of Y outside the column space of D~.
inline double shallow_min_loss(const DenseMatrix& pattern, const DenseMatrix& X, const Vector& Y,
                               CutoffCriterion c) {
    const DenseMatrix dtilde = build_Dtilde(pattern, X);
    const ProjectorBasis b = column_space_basis(dtilde, c);
    return 0.5 * Y.squaredNorm() - 0.5 * project(b, Y).squaredNorm();
}

struct RankTrialResult {
    Regime regime = Regime::Underparam;
    Eigen::Index m = 0, d_x = 0, d = 0;
    Eigen::Index observed_rank = 0;
    double smallest_singular_value = 0.0;
    double loss_ratio = 0.0;  // ||P_N[D~]Y||^2 / ||Y||^2
};

struct RankExperimentSummary {
    Eigen::Index trials = 0;
    Eigen::Index full_rank_trials = 0;  // rank == min(d*d_x, m)
    double mean_loss_ratio = 0.0;
};

struct RankExperiment {
    std::vector<RankTrialResult> trials;
    RankExperimentSummary summary;
};

inline RankExperiment rank_experiment(Regime regime, Eigen::Index m, Eigen::Index d_x,
                                      Eigen::Index d, Eigen::Index trials, std::uint64_t seed,
                                      CutoffCriterion c, bool signed_pattern = false) {
    if (trials < 1) throw DataError("rank_experiment: trials must be >= 1");
    RankExperiment out;
    out.trials.reserve(static_cast<std::size_t>(trials));
    const Eigen::Index max_rank = std::min(d * d_x, m);
    double ratio_sum = 0.0;
    for (Eigen::Index trial = 0; trial < trials; ++trial) {
        const std::uint64_t trial_seed = seed + 3 * static_cast<std::uint64_t>(trial);
        const DenseMatrix X = sample_gaussian(m, d_x, trial_seed);
        const Vector Y = sample_gaussian(m, 1, trial_seed + 1).col(0);
        const DenseMatrix pattern = sample_pattern(m, d, trial_seed + 2, signed_pattern);
        const DenseMatrix dtilde = build_Dtilde(pattern, X);

        Eigen::BDCSVD<DenseMatrix> svd(dtilde, Eigen::ComputeThinU);
        const auto& sv = svd.singularValues();
        const double cutoff =
            singular_value_cutoff(c, dtilde.rows(), dtilde.cols(), sv(0), infinity_norm(dtilde));
        Eigen::Index rank = 0;
        while (rank < sv.size() && sv(rank) > cutoff) ++rank;

        const Vector projected = svd.matrixU().leftCols(rank) *
                                 (svd.matrixU().leftCols(rank).transpose() * Y);
        RankTrialResult r;
        r.regime = regime;
        r.m = m;
        r.d_x = d_x;
        r.d = d;
        r.observed_rank = rank;
        r.smallest_singular_value = rank > 0 ? sv(rank - 1) : 0.0;
        r.loss_ratio = (Y - projected).squaredNorm() / Y.squaredNorm();
        ratio_sum += r.loss_ratio;
        if (rank == max_rank) ++out.summary.full_rank_trials;
        out.trials.push_back(r);
    }
    out.summary.trials = trials;
    out.summary.mean_loss_ratio = ratio_sum / static_cast<double>(trials);
    return out;
}

struct PatternProbeResult {
    double min_observed_smin = std::numeric_limits<double>::infinity();
    std::vector<Eigen::Index> index_sizes_tested;
};

// Spot-checks s_min(Lambda_I) over random index sets of the regime's
// relevant size (|I| >= m/2 underparameterized, |I| <= d/2
// overparameterized). A sample, not a certificate over all I.
inline PatternProbeResult pattern_condition_probe(const DenseMatrix& pattern, Regime regime,
                                                  Eigen::Index samples, std::uint64_t seed) {
    const Eigen::Index m = pattern.rows();
    const Eigen::Index d = pattern.cols();
    const Eigen::Index target_size =
        regime == Regime::Underparam ? (m + 1) / 2 : std::max<Eigen::Index>(1, d / 2);

    std::mt19937_64 rng(seed);
    std::vector<Eigen::Index> all(static_cast<std::size_t>(m));
    std::iota(all.begin(), all.end(), Eigen::Index{0});

    PatternProbeResult out;
    if (pattern.size() == 0) {
        out.min_observed_smin = 0.0;
        return out;
    }
    for (Eigen::Index s = 0; s < samples; ++s) {
        std::shuffle(all.begin(), all.end(), rng);
        DenseMatrix sub(target_size, d);
        for (Eigen::Index i = 0; i < target_size; ++i)
            sub.row(i) = pattern.row(all[static_cast<std::size_t>(i)]);
        Eigen::BDCSVD<DenseMatrix> svd(sub);
        const auto& sv = svd.singularValues();
        out.min_observed_smin = std::min(out.min_observed_smin, sv(sv.size() - 1));
        out.index_sizes_tested.push_back(target_size);
    }
    return out;
}

struct ChiSquareTailResult {
    double empirical_upper = 0.0;  // P(sum a_i^2 (g_i^2 - 1) >= 2 sqrt(t) ||a^2|| + 2 K^2 t)
    double empirical_lower = 0.0;  // P(sum a_i^2 (g_i^2 - 1) <= -2 sqrt(t) ||a^2||)
    double bound = 0.0;            // e^{-t}
    double standard_error_upper = 0.0;
    double standard_error_lower = 0.0;
    bool upper_within_bound = false;
    bool lower_within_bound = false;
};

inline ChiSquareTailResult chi_square_tail_check(const std::vector<double>& weights, double t,
                                                 Eigen::Index trials, std::uint64_t seed) {
    double k_max = 0.0, sum4 = 0.0;
    for (double a : weights) {
        if (a < 0.0) throw DataError("chi_square_tail_check: weights must be nonnegative");
        k_max = std::max(k_max, a);
        sum4 += a * a * a * a;
    }
    const double upper_threshold = 2.0 * std::sqrt(t) * std::sqrt(sum4) + 2.0 * k_max * k_max * t;
    const double lower_threshold = -2.0 * std::sqrt(t) * std::sqrt(sum4);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::Index upper_hits = 0, lower_hits = 0;
    for (Eigen::Index i = 0; i < trials; ++i) {
        double s = 0.0;
        for (double a : weights) {
            const double g = normal(rng);
            s += a * a * (g * g - 1.0);
        }
        // strict comparisons: ties only occur in the degenerate all-zero
        // case, where the event is empty
        if (s > upper_threshold) ++upper_hits;
        if (s < lower_threshold) ++lower_hits;
    }

    ChiSquareTailResult r;
    r.bound = std::exp(-t);
    r.empirical_upper = static_cast<double>(upper_hits) / static_cast<double>(trials);
    r.empirical_lower = static_cast<double>(lower_hits) / static_cast<double>(trials);
    auto se = [trials](double p) {
        return std::sqrt(std::max(p * (1.0 - p), 1e-12) / static_cast<double>(trials));
    };
    r.standard_error_upper = se(r.empirical_upper);
    r.standard_error_lower = se(r.empirical_lower);
    r.upper_within_bound = r.empirical_upper <= r.bound + 3.0 * r.standard_error_upper;
    r.lower_within_bound = r.empirical_lower <= r.bound + 3.0 * r.standard_error_lower;
    return r;
}

// Reference sample for the loss-ratio law in the underparameterized
// regime: (z_1^2 + ... + z_{m - d_x d}^2) / (z_1^2 + ... + z_m^2).
inline std::vector<double> chi_square_ratio_reference(Eigen::Index m, Eigen::Index null_dim,
                                                      Eigen::Index draws, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(draws));
    for (Eigen::Index i = 0; i < draws; ++i) {
        double num = 0.0, den = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) {
            const double z = normal(rng);
            if (j < null_dim) num += z * z;
            den += z * z;
        }
        out.push_back(num / den);
    }
    return out;
}

// Two-sample Kolmogorov-Smirnov distance.
inline double ks_distance(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        // advance past every sample tied at the current value on both sides
        // before comparing the ECDFs, otherwise ties inflate the statistic
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] == x) ++i;
        while (j < b.size() && b[j] == x) ++j;
        const double fa = static_cast<double>(i) / static_cast<double>(a.size());
        const double fb = static_cast<double>(j) / static_cast<double>(b.size());
        d = std::max(d, std::abs(fa - fb));
    }
    return d;
}

}  // namespace lossmin

#pragma once

// Basis-invariant diagnostics for a stack of feature directions (rows):
// entropy effective rank, superposition index, intrinsic Welch-normalized
// overlap, alignment index, numerical/energy rank and cosine matrices, plus
// the mutually-obtuse regime classifier.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "gnnsup/numerics.hpp"

namespace gnnsup {

enum class Centering { None, Com };

/// Which centering / PC1 convention a feature matrix gets.
enum class FeatureFamily { Centroid, GraphProbe, NodeProbe };

std::string to_string(FeatureFamily f);

/// Rows minus their mean row.
template <typename Derived>
MatrixX<typename Derived::Scalar> com_center(const Eigen::MatrixBase<Derived>& c) {
    MatrixX<typename Derived::Scalar> out = c;
    if (out.rows() > 0) out.rowwise() -= out.colwise().mean();
    return out;
}

/// Each row scaled to unit norm. Throws ZeroRow on a zero row.
template <typename Derived>
MatrixX<typename Derived::Scalar> normalize_rows(const Eigen::MatrixBase<Derived>& c) {
    MatrixX<typename Derived::Scalar> out = c;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const auto n = out.row(i).norm();
        if (!(n > 0)) throw Error(ErrorCode::ZeroRow, "row " + std::to_string(i) + " has zero norm");
        out.row(i) /= n;
    }
    return out;
}

/// exp(H(p)) with p_i = sigma_i / sum_j sigma_j. An all-zero matrix (after
/// centering) has effective rank 0.
template <typename Derived>
typename Derived::Scalar eff_rank(const Eigen::MatrixBase<Derived>& c, Centering center) {
    using Scalar = typename Derived::Scalar;
    if (c.rows() < 1 || c.cols() < 1) throw Error(ErrorCode::ShapeMismatch, "eff_rank of empty matrix");
    const MatrixX<Scalar> m = center == Centering::Com ? com_center(c) : MatrixX<Scalar>(c);
    const VectorX<Scalar> sigma = singular_values(m);
    const Scalar total = sigma.sum();
    if (!(total > Scalar(0))) return Scalar(0);
    Scalar entropy = 0;
    for (Eigen::Index i = 0; i < sigma.size(); ++i) {
        const Scalar p = sigma(i) / total;
        if (p > Scalar(0)) entropy -= p * std::log(p);
    }
    return std::exp(entropy);
}

/// k_a / effrank; empty when either is zero.
template <typename Scalar>
std::optional<Scalar> superposition_index(int k_a, Scalar effrank) {
    if (k_a <= 0 || !(effrank > Scalar(0))) return std::nullopt;
    return static_cast<Scalar>(k_a) / effrank;
}

template <typename Scalar>
struct WnoResult {
    std::optional<Scalar> value;
    /// Dimension of the retained right-singular subspace.
    int r = 0;
    int dropped_rows = 0;
    Scalar mean_cos2 = 0;
    Scalar welch_bound = 0;
};

/// Rows with projected norm below this are dropped from the overlap mean.
inline constexpr double kWnoDropNorm = 1e-10;

/// Intrinsic Welch-normalized overlap: 0 at the Welch bound, 1 for random
/// directions in the retained subspace. Rows are unit-normalized first.
///   centroid:    COM-center, remove PC1
///   graph probe: remove PC1
///   node probe:  raw
/// Then r = ceil(effrank), project to the top-r right-singular subspace,
/// row-normalize and compare mean cos^2 to 1/r and to the Welch bound.
template <typename Derived>
WnoResult<typename Derived::Scalar> wno_intrinsic(const Eigen::MatrixBase<Derived>& c, FeatureFamily family) {
    using Scalar = typename Derived::Scalar;
    WnoResult<Scalar> out;
    if (c.rows() < 2) return out;
    MatrixX<Scalar> prepared = normalize_rows(c);
    if (family == FeatureFamily::Centroid) prepared = com_center(prepared);
    if (family != FeatureFamily::NodeProbe) {
        if (prepared.norm() > Scalar(0)) {
            const auto dec = svd(prepared);
            const VectorX<Scalar> pc1 = dec.v.col(0);
            prepared -= (prepared * pc1) * pc1.transpose();
        }
    }
    const Scalar er = eff_rank(prepared, Centering::None);
    // ceil() with a guard against effrank = 2 + 1e-15 style round-off.
    int r = static_cast<int>(std::ceil(er - Scalar(1e-9)));
    r = std::min<int>(r, static_cast<int>(std::min(prepared.rows(), prepared.cols())));
    out.r = r;
    if (r <= 1) return out;

    const auto dec = svd(prepared);
    const MatrixX<Scalar> projected = prepared * dec.v.leftCols(r);
    std::vector<Eigen::Index> kept;
    for (Eigen::Index i = 0; i < projected.rows(); ++i) {
        if (projected.row(i).norm() < Scalar(kWnoDropNorm))
            ++out.dropped_rows;
        else
            kept.push_back(i);
    }
    const int k = static_cast<int>(kept.size());
    if (k <= 1) return out;
    MatrixX<Scalar> unit(k, r);
    for (int i = 0; i < k; ++i) unit.row(i) = projected.row(kept[static_cast<std::size_t>(i)]).normalized();
    const MatrixX<Scalar> gram = unit * unit.transpose();
    Scalar sum = 0;
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) sum += gram(i, j) * gram(i, j);
    out.mean_cos2 = Scalar(2) * sum / (static_cast<Scalar>(k) * static_cast<Scalar>(k - 1));
    const Scalar rr = static_cast<Scalar>(r);
    out.welch_bound = std::max(Scalar(0), (static_cast<Scalar>(k) - rr) / (rr * static_cast<Scalar>(k - 1)));
    const Scalar random = Scalar(1) / rr;
    out.value = Scalar(1) - (random - out.mean_cos2) / (random - out.welch_bound);
    return out;
}

/// Mean over rows of max_j |c_j| / ||c||. Not basis-invariant by design.
template <typename Derived>
typename Derived::Scalar alignment_index(const Eigen::MatrixBase<Derived>& c) {
    using Scalar = typename Derived::Scalar;
    if (c.rows() < 1) throw Error(ErrorCode::ShapeMismatch, "alignment_index of empty matrix");
    Scalar total = 0;
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
        const Scalar n = c.row(i).norm();
        if (!(n > Scalar(0))) throw Error(ErrorCode::ZeroRow, "alignment_index row " + std::to_string(i));
        total += c.row(i).cwiseAbs().maxCoeff() / n;
    }
    return total / static_cast<Scalar>(c.rows());
}

template <typename Scalar>
struct CosineMatrices {
    MatrixX<Scalar> cos;
    MatrixX<Scalar> abs_cos;
};

template <typename Derived>
CosineMatrices<typename Derived::Scalar> cosine_matrix(const Eigen::MatrixBase<Derived>& c) {
    using Scalar = typename Derived::Scalar;
    const MatrixX<Scalar> unit = normalize_rows(c);
    CosineMatrices<Scalar> out;
    out.cos = unit * unit.transpose();
    for (Eigen::Index i = 0; i < out.cos.rows(); ++i) {
        out.cos(i, i) = Scalar(1);
        for (Eigen::Index j = 0; j < i; ++j) out.cos(j, i) = out.cos(i, j);
    }
    out.abs_cos = out.cos.cwiseAbs();
    return out;
}

/// Off-diagonal |cos| threshold statistics; empty for fewer than two rows.
struct CosineThreshold {
    bool any = false;
    bool all = false;
};

template <typename Derived>
std::optional<CosineThreshold> cosine_threshold(const Eigen::MatrixBase<Derived>& abs_cos, double threshold) {
    if (abs_cos.rows() < 2) return std::nullopt;
    CosineThreshold t{false, true};
    for (Eigen::Index i = 0; i < abs_cos.rows(); ++i)
        for (Eigen::Index j = i + 1; j < abs_cos.cols(); ++j) {
            const bool above = abs_cos(i, j) > threshold;
            t.any = t.any || above;
            t.all = t.all && above;
        }
    return t;
}

inline constexpr double kDefaultRankTau = 1e-4;
inline constexpr double kDefaultRankEta = 0.01;
inline constexpr double kDeadColumnTol = 1e-12;

struct RankProfile {
    Vector sigma;
    int r_tau = 0;
    int r_eta = 0;
    double tau = kDefaultRankTau;
    double eta = kDefaultRankEta;
    int dead_columns = 0;
};

/// r_tau = #{i : sigma_i / sigma_1 >= tau}; r_eta = min r with cumulative
/// sigma^2 energy >= (1 - eta); dead columns have max |entry| < 1e-12.
template <typename Derived>
RankProfile numerical_rank(const Eigen::MatrixBase<Derived>& h, double tau = kDefaultRankTau,
                           double eta = kDefaultRankEta) {
    RankProfile out;
    out.tau = tau;
    out.eta = eta;
    const Matrix m = h.template cast<double>();
    out.sigma = singular_values(m);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        if (m.col(j).cwiseAbs().maxCoeff() < kDeadColumnTol) ++out.dead_columns;
    if (out.sigma.size() == 0 || !(out.sigma(0) > 0.0)) return out;
    for (Eigen::Index i = 0; i < out.sigma.size(); ++i)
        if (out.sigma(i) / out.sigma(0) >= tau) ++out.r_tau;
    const double energy = out.sigma.squaredNorm();
    double cumulative = 0.0;
    for (Eigen::Index i = 0; i < out.sigma.size(); ++i) {
        cumulative += out.sigma(i) * out.sigma(i);
        out.r_eta = static_cast<int>(i) + 1;
        if (cumulative >= (1.0 - eta) * energy) break;
    }
    return out;
}

enum class ObtuseRegime { UnderComplete, SimplexThreshold, Intermediate, OverComplete };

std::string to_string(ObtuseRegime r);

/// n unit vectors in R^d: n <= d, n = d+1, d+1 < n <= 2d, n > 2d.
ObtuseRegime obtuse_regime(int n, int d);

/// All diagnostics for one stack of unit feature rows.
struct GeometryReport {
    int k_a = 0;
    double effrank = 0.0;
    std::optional<double> si;
    std::optional<double> wno_i;
    std::optional<double> ai;
    int r = 0;
    Matrix cosine;
    Matrix abs_cosine;
};

/// Centroids are COM-centered for effrank and AI; probes use raw rows. An
/// empty input yields k_a = 0 and every metric NA.
GeometryReport geometry_report(const Matrix& unit_rows, FeatureFamily family);

}  // namespace gnnsup

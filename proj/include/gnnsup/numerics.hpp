#pragma once

// Dense matrix aliases and the one-sided Jacobi SVD used by every spectral
// diagnostic in the library.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "gnnsup/error.hpp"

namespace gnnsup {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Row-major dense 64-bit matrix. Node embeddings, pooled embeddings,
/// feature matrices and parameters all live in this type.
using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.derived().array().isFinite().all();
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const char* what) {
    if (!all_finite(m)) throw Error(ErrorCode::NonFinite, what);
}

/// Thin SVD: a = u * diag(sigma) * v^T with u (m x k), v (n x k), k = min(m, n).
template <typename Scalar>
struct SvdResult {
    MatrixX<Scalar> u;
    VectorX<Scalar> sigma;
    MatrixX<Scalar> v;
};

namespace detail {

// Hestenes one-sided Jacobi on a tall matrix (rows >= cols), column-major work copy.
template <typename Scalar>
SvdResult<Scalar> jacobi_svd_tall(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& a) {
    using ColMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const Eigen::Index m = a.rows();
    const Eigen::Index n = a.cols();
    ColMat w = a;
    ColMat v = ColMat::Identity(n, n);
    const Scalar eps = std::numeric_limits<Scalar>::epsilon();
    const Scalar tol = eps * static_cast<Scalar>(std::max<Eigen::Index>(m, 1));
    const long max_sweeps = 100L * static_cast<long>(n);
    const Scalar negligible = eps * eps * w.squaredNorm();

    bool converged = false;
    for (long sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        converged = true;
        for (Eigen::Index i = 0; i + 1 < n; ++i) {
            for (Eigen::Index j = i + 1; j < n; ++j) {
                const Scalar alpha = w.col(i).squaredNorm();
                const Scalar beta = w.col(j).squaredNorm();
                const Scalar gamma = w.col(i).dot(w.col(j));
                if (gamma == Scalar(0) || std::abs(gamma) <= tol * std::sqrt(alpha) * std::sqrt(beta)) continue;
                if (std::min(alpha, beta) <= negligible) continue;
                converged = false;
                const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
                const Scalar t = (zeta >= Scalar(0) ? Scalar(1) : Scalar(-1)) /
                                 (std::abs(zeta) + std::sqrt(Scalar(1) + zeta * zeta));
                const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
                const Scalar s = c * t;
                for (Eigen::Index r = 0; r < m; ++r) {
                    const Scalar wi = w(r, i);
                    const Scalar wj = w(r, j);
                    w(r, i) = c * wi - s * wj;
                    w(r, j) = s * wi + c * wj;
                }
                for (Eigen::Index r = 0; r < n; ++r) {
                    const Scalar vi = v(r, i);
                    const Scalar vj = v(r, j);
                    v(r, i) = c * vi - s * vj;
                    v(r, j) = s * vi + c * vj;
                }
            }
        }
    }
    if (!converged) throw Error(ErrorCode::NoConvergence, "Jacobi SVD exceeded sweep cap");

    VectorX<Scalar> norms(n);
    for (Eigen::Index j = 0; j < n; ++j) norms(j) = w.col(j).norm();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index x, Eigen::Index y) { return norms(x) > norms(y); });

    SvdResult<Scalar> out;
    out.sigma.resize(n);
    out.u.resize(m, n);
    out.v.resize(n, n);
    const Scalar sigma_max = n > 0 ? norms(order.front()) : Scalar(0);
    for (Eigen::Index k = 0; k < n; ++k) {
        const Eigen::Index src = order[static_cast<std::size_t>(k)];
        out.sigma(k) = norms(src);
        out.v.col(k) = v.col(src);

        // Small singular values give u columns that are only orthogonal to
        // eps * sigma_max / sigma; re-orthogonalize (twice) against the
        // already accepted columns, and complete with a basis vector when the
        // column is numerically null.
        VectorX<Scalar> col = VectorX<Scalar>::Zero(m);
        const bool usable = norms(src) > sigma_max * eps * Scalar(m) && norms(src) > Scalar(0);
        if (usable) col = w.col(src) / norms(src);
        for (int pass = 0; pass < 2 && usable; ++pass) {
            for (Eigen::Index q = 0; q < k; ++q) col -= out.u.col(q).dot(col) * VectorX<Scalar>(out.u.col(q));
            col.normalize();
        }
        if (!usable) {
            Scalar best = Scalar(-1);
            for (Eigen::Index e = 0; e < m; ++e) {
                VectorX<Scalar> cand = VectorX<Scalar>::Unit(m, e);
                for (int pass = 0; pass < 2; ++pass)
                    for (Eigen::Index q = 0; q < k; ++q)
                        cand -= out.u.col(q).dot(cand) * VectorX<Scalar>(out.u.col(q));
                const Scalar nn = cand.norm();
                if (nn > best) {
                    best = nn;
                    col = cand / nn;
                }
            }
        }
        out.u.col(k) = col;
    }
    return out;
}

}  // namespace detail

/// One-sided Jacobi SVD. Singular values are descending and non-negative;
/// column signs are deterministic for identical input bits.
template <typename Derived>
SvdResult<typename Derived::Scalar> svd(const Eigen::MatrixBase<Derived>& a) {
    using Scalar = typename Derived::Scalar;
    if (a.rows() < 1 || a.cols() < 1) throw Error(ErrorCode::ShapeMismatch, "svd of empty matrix");
    require_finite(a, "svd input");
    using ColMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    if (a.rows() >= a.cols()) return detail::jacobi_svd_tall<Scalar>(ColMat(a));
    auto t = detail::jacobi_svd_tall<Scalar>(ColMat(a.transpose()));
    std::swap(t.u, t.v);
    return t;
}

/// Singular values only (same algorithm).
template <typename Derived>
VectorX<typename Derived::Scalar> singular_values(const Eigen::MatrixBase<Derived>& a) {
    return svd(a).sigma;
}

}  // namespace gnnsup

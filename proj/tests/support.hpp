#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include <Eigen/QR>

#include "gnnsup/geometry.hpp"
#include "gnnsup/model.hpp"
#include "gnnsup/rng.hpp"

namespace testing {

using namespace gnnsup;

inline Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

inline Matrix random_orthogonal(Rng& rng, Eigen::Index n) {
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ();
    return q;
}

/// Connected random graph on n nodes: a random tree plus extra edges.
inline Graph random_graph(Rng& rng, int n, int feature_dim, int num_labels, double extra = 0.3) {
    Graph g;
    g.num_nodes = n;
    std::vector<std::vector<bool>> seen(n, std::vector<bool>(n, false));
    auto add = [&](int u, int v) {
        if (u == v) return;
        if (u > v) std::swap(u, v);
        if (seen[u][v]) return;
        seen[u][v] = true;
        g.edges.emplace_back(u, v);
    };
    for (int i = 1; i < n; ++i) add(static_cast<int>(rng.uniform_int(i)), i);
    for (int u = 0; u < n; ++u)
        for (int v = u + 1; v < n; ++v)
            if (rng.bernoulli(extra)) add(u, v);
    std::sort(g.edges.begin(), g.edges.end());
    g.features = gaussian(rng, n, feature_dim);
    for (int c = 0; c < num_labels; ++c) g.labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
    return g;
}

/// Largest relative difference with a 1e-3 floor on the denominator.
inline double max_rel_error(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (Eigen::Index k = 0; k < a.size(); ++k) {
        const double scale = std::max({std::abs(a.data()[k]), std::abs(b.data()[k]), 1e-3});
        worst = std::max(worst, std::abs(a.data()[k] - b.data()[k]) / scale);
    }
    return worst;
}

/// Central finite-difference gradient of a scalar function of m.
inline Matrix finite_difference(const Matrix& m, const std::function<double(const Matrix&)>& f, double h = 1e-5) {
    Matrix g(m.rows(), m.cols());
    for (Eigen::Index k = 0; k < m.size(); ++k) {
        Matrix up = m, down = m;
        up.data()[k] += h;
        down.data()[k] -= h;
        g.data()[k] = (f(up) - f(down)) / (2.0 * h);
    }
    return g;
}

struct GradCheck {
    double worst = 0.0;
    int kinks = 0;
    int entries = 0;
};

/// Compares an analytic gradient with central differences at h. Entries
/// where the steps h and h/10 disagree sit within h of a ReLU-type kink and
/// are counted instead of compared.
inline GradCheck compare_gradient(const Matrix& analytic, const Matrix& m,
                                  const std::function<double(const Matrix&)>& f, double h = 1e-5) {
    const Matrix coarse = finite_difference(m, f, h);
    const Matrix fine = finite_difference(m, f, h / 10.0);
    GradCheck out;
    for (Eigen::Index k = 0; k < m.size(); ++k) {
        ++out.entries;
        const double a = analytic.data()[k], c = coarse.data()[k], d = fine.data()[k];
        if (std::abs(c - d) > 1e-5 * std::max({std::abs(c), std::abs(d), 1e-3})) {
            ++out.kinks;
            continue;
        }
        out.worst = std::max(out.worst, std::abs(a - c) / std::max({std::abs(a), std::abs(c), 1e-3}));
    }
    return out;
}


inline Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
    Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& row : r) {
        Eigen::Index j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

/// Vertices of a centred regular simplex: r + 1 unit rows in R^r.
inline Matrix regular_simplex(int r) {
    const int k = r + 1;
    Matrix e = Matrix::Identity(k, k);
    e.rowwise() -= e.colwise().mean();
    const auto dec = svd(e);
    Matrix coords = e * dec.v.leftCols(r);
    return normalize_rows(coords);
}

/// Finite-difference check of the BCE loss gradient for every parameter.
inline GradCheck model_gradient_check(const Model& model, const Graph& g) {
    const GraphBatch batch = make_batch(g);
    auto loss_of = [&](const Model& m) {
        ad::Tape t;
        const ForwardVars fv = forward_on_tape(t, m, batch, false);
        return ad::bce_with_logits(fv.logits, batch.targets).value()(0, 0);
    };
    ad::Tape tape;
    const ForwardVars fv = forward_on_tape(tape, model, batch, true);
    tape.backward(ad::bce_with_logits(fv.logits, batch.targets));
    GradCheck total;
    for (std::size_t k = 0; k < model.parameters.size(); ++k) {
        Matrix analytic = fv.params[k].grad();
        if (analytic.size() == 0) analytic = Matrix::Zero(model.parameters[k].value.rows(), model.parameters[k].value.cols());
        const auto check = compare_gradient(analytic, model.parameters[k].value, [&](const Matrix& v) {
            Model perturbed = model;
            perturbed.parameters[k].value = v;
            return loss_of(perturbed);
        });
        total.worst = std::max(total.worst, check.worst);
        total.kinks += check.kinks;
        total.entries += check.entries;
    }
    return total;
}

}  // namespace testing

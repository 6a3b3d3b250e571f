#include "gnnsup/features.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

namespace gnnsup {

namespace {

double log_sigmoid_loss(double margin, int y) {
    // Stable BCE with logits.
    return std::max(margin, 0.0) - margin * y + std::log1p(std::exp(-std::abs(margin)));
}

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace

std::string to_string(FeatureKind k) { return k == FeatureKind::Centroid ? "centroid" : "probe"; }
std::string to_string(Level l) { return l == Level::Node ? "node" : "graph"; }

std::string ConceptSpec::name() const {
    switch (family) {
    case ConceptFamily::Is: return "Is_" + std::to_string(parameter);
    case ConceptFamily::NextTo: return "NextTo_" + std::to_string(parameter);
    case ConceptFamily::Inside: return "Inside_C" + std::to_string(parameter);
    case ConceptFamily::Has: return "Has_C" + std::to_string(parameter);
    }
    return "?";
}

RecallMatrix recall_matrix(const Matrix& predictions, const Matrix& targets) {
    if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
        throw Error(ErrorCode::ShapeMismatch, "predictions/targets");
    const Eigen::Index k = targets.cols();
    RecallMatrix r;
    r.values = Matrix::Zero(k, k);
    r.defined.assign(static_cast<std::size_t>(k), false);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index g = 0; g < targets.rows(); ++g) {
        if (targets.row(g).sum() != 1.0) continue;
        Eigen::Index cls = 0;
        targets.row(g).maxCoeff(&cls);
        ++counts[static_cast<std::size_t>(cls)];
        r.values.row(cls) += predictions.row(g);
    }
    for (Eigen::Index c = 0; c < k; ++c) {
        const int n = counts[static_cast<std::size_t>(c)];
        if (n == 0) {
            r.values.row(c).setConstant(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        r.values.row(c) /= n;
        r.defined[static_cast<std::size_t>(c)] = true;
    }
    return r;
}

bool class_active(const RecallMatrix& recall, int cls) {
    if (!recall.defined.at(static_cast<std::size_t>(cls))) return false;
    if (!(recall.values(cls, cls) >= kInClassRecall)) return false;
    for (Eigen::Index j = 0; j < recall.values.cols(); ++j)
        if (j != cls && !(recall.values(cls, j) < kInClassRecall)) return false;
    return true;
}

std::vector<int> concept_targets(const Dataset& data, const ConceptSpec& spec) {
    const bool pairwise_concept = spec.family == ConceptFamily::Is || spec.family == ConceptFamily::NextTo;
    if (pairwise_concept != (data.family == Family::Pairwise))
        throw Error(ErrorCode::WrongDataset, spec.name() + " is not defined on " + to_string(data.family));
    if (pairwise_concept && (spec.parameter < 0 || spec.parameter >= data.num_classes))
        throw Error(ErrorCode::InvalidConfig, "type id out of range");
    if (!pairwise_concept && (spec.parameter < 3 || spec.parameter > 6))
        throw Error(ErrorCode::InvalidConfig, "cycle length out of range");

    std::vector<int> out;
    for (const Graph& g : data.graphs) {
        switch (spec.family) {
        case ConceptFamily::Is:
            for (int t : g.node_types) out.push_back(t == spec.parameter ? 1 : 0);
            break;
        case ConceptFamily::NextTo: {
            const auto adj = g.adjacency();
            for (int i = 0; i < g.num_nodes; ++i) {
                int hit = 0;
                for (int j : adj[static_cast<std::size_t>(i)])
                    if (g.node_types[static_cast<std::size_t>(j)] == spec.parameter) hit = 1;
                out.push_back(hit);
            }
            break;
        }
        case ConceptFamily::Inside:
            for (int i = 0; i < g.num_nodes; ++i) out.push_back(node_in_cycle(g, i, spec.parameter) ? 1 : 0);
            break;
        case ConceptFamily::Has: out.push_back(has_cycle(g, spec.parameter) ? 1 : 0); break;
        }
    }
    return out;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw Error(ErrorCode::ShapeMismatch, "auc scores/labels");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos = 0, neg = 0, rank_sum = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] != 0) {
                pos += 1;
                rank_sum += mid_rank;
            } else {
                neg += 1;
            }
        }
        i = j;
    }
    if (pos == 0 || neg == 0) throw Error(ErrorCode::SingleClass, "auc needs both classes");
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

ProbeResult fit_probe(const Matrix& z, std::span<const int> labels, const std::vector<bool>& is_train, double l2) {
    if (static_cast<std::size_t>(z.rows()) != labels.size() || labels.size() != is_train.size())
        throw Error(ErrorCode::ShapeMismatch, "fit_probe inputs");
    const Eigen::Index d = z.cols();
    std::vector<Eigen::Index> train_rows, test_rows;
    int train_pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (is_train[i]) {
            train_rows.push_back(static_cast<Eigen::Index>(i));
            train_pos += labels[i] != 0;
        } else {
            test_rows.push_back(static_cast<Eigen::Index>(i));
        }
    }
    if (train_pos == 0 || train_pos == static_cast<int>(train_rows.size()))
        throw Error(ErrorCode::SingleClass, "probe train split lacks a class");

    const Eigen::Index n = static_cast<Eigen::Index>(train_rows.size());
    Matrix x(n, d + 1);
    Vector y(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        x.row(k).head(d) = z.row(train_rows[static_cast<std::size_t>(k)]);
        x(k, d) = 1.0;
        y(k) = labels[static_cast<std::size_t>(train_rows[static_cast<std::size_t>(k)])] != 0 ? 1.0 : 0.0;
    }
    Vector reg = Vector::Constant(d + 1, l2);
    reg(d) = 0.0;  // intercept is not penalized
    auto objective = [&](const Vector& theta) {
        const Vector margin = x * theta;
        double total = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) total += log_sigmoid_loss(margin(k), static_cast<int>(y(k)));
        return total / static_cast<double>(n) + 0.5 * theta.cwiseProduct(reg).dot(theta);
    };

    // Damped Newton with Armijo backtracking on the strictly convex objective.
    Vector theta = Vector::Zero(d + 1);
    double loss = objective(theta);
    ProbeResult res;
    constexpr double kGradTol = 1e-8;
    constexpr int kMaxIter = 200;
    for (int it = 0; it < kMaxIter; ++it) {
        const Vector margin = x * theta;
        Vector residual(n), weight(n);
        for (Eigen::Index k = 0; k < n; ++k) {
            const double s = sigmoid(margin(k));
            residual(k) = s - y(k);
            weight(k) = s * (1.0 - s);
        }
        const Vector grad = x.transpose() * residual / static_cast<double>(n) + reg.cwiseProduct(theta);
        res.iterations = it;
        if (grad.norm() <= kGradTol) {
            res.converged = true;
            break;
        }
        Matrix hess = x.transpose() * (x.array().colwise() * weight.array()).matrix() / static_cast<double>(n);
        hess.diagonal() += reg + Vector::Constant(d + 1, 1e-12);
        Vector step = -hess.ldlt().solve(grad);
        if (!all_finite(step) || grad.dot(step) >= 0.0) step = -grad;
        double t = 1.0;
        double next_loss = objective(theta + t * step);
        for (int halving = 0; halving < 60 && next_loss > loss + 1e-4 * t * grad.dot(step); ++halving) {
            t *= 0.5;
            next_loss = objective(theta + t * step);
        }
        if (!(next_loss <= loss)) break;  // no further descent possible in floating point
        theta += t * step;
        loss = next_loss;
    }
    res.normal = theta.head(d);
    res.intercept = theta(d);
    if (!all_finite(res.normal)) throw Error(ErrorCode::NonFinite, "probe normal");

    std::vector<double> scores;
    std::vector<int> test_labels;
    for (Eigen::Index r : test_rows) {
        scores.push_back(z.row(r).dot(res.normal));
        test_labels.push_back(labels[static_cast<std::size_t>(r)] != 0 ? 1 : 0);
    }
    res.auc = auc(scores, test_labels);
    return res;
}

FeatureMatrix class_centroids(const Matrix& embeddings, const Matrix& targets, const RecallMatrix& recall) {
    if (embeddings.rows() != targets.rows()) throw Error(ErrorCode::ShapeMismatch, "embeddings/targets");
    const Eigen::Index k = targets.cols();
    if (recall.values.rows() != k) throw Error(ErrorCode::ShapeMismatch, "recall matrix size");
    FeatureMatrix fm;
    fm.kind = FeatureKind::Centroid;
    fm.level = Level::Graph;
    std::vector<Vector> centroids;
    for (Eigen::Index c = 0; c < k; ++c) {
        if (!class_active(recall, static_cast<int>(c))) continue;
        Vector sum = Vector::Zero(embeddings.cols());
        int count = 0;
        for (Eigen::Index g = 0; g < targets.rows(); ++g) {
            if (targets.row(g).sum() == 1.0 && targets(g, c) == 1.0) {
                sum += embeddings.row(g).transpose();
                ++count;
            }
        }
        if (count == 0) continue;
        const Vector centroid = sum / count;
        if (!(centroid.norm() > 0.0)) continue;
        centroids.push_back(centroid);
        fm.active_ids.push_back(static_cast<int>(c));
        fm.scores.push_back(recall.values(c, c));
    }
    fm.raw.resize(static_cast<Eigen::Index>(centroids.size()), embeddings.cols());
    for (std::size_t i = 0; i < centroids.size(); ++i) fm.raw.row(static_cast<Eigen::Index>(i)) = centroids[i].transpose();
    fm.rows = normalize_rows(fm.raw);
    return fm;
}

FeatureMatrix probe_feature_matrix(const std::vector<ProbeResult>& probes, Level level, double threshold) {
    FeatureMatrix fm;
    fm.kind = FeatureKind::Probe;
    fm.level = level;
    std::vector<const ProbeResult*> kept;
    for (const auto& p : probes)
        if (p.auc >= threshold && p.normal.norm() > 0.0) kept.push_back(&p);
    const Eigen::Index d = probes.empty() ? 0 : probes.front().normal.size();
    fm.raw.resize(static_cast<Eigen::Index>(kept.size()), d);
    for (std::size_t i = 0; i < kept.size(); ++i) {
        fm.raw.row(static_cast<Eigen::Index>(i)) = kept[i]->normal.transpose();
        fm.active_ids.push_back(kept[i]->concept_id);
        fm.scores.push_back(kept[i]->auc);
    }
    fm.rows = normalize_rows(fm.raw);
    return fm;
}

void write_feature_matrix_csv(std::ostream& os, const FeatureMatrix& fm) {
    os << "kind,level,concept_id,auc_or_recall";
    for (Eigen::Index j = 0; j < fm.rows.cols(); ++j) os << ",x" << j;
    os << '\n' << std::setprecision(17);
    for (Eigen::Index i = 0; i < fm.rows.rows(); ++i) {
        os << to_string(fm.kind) << ',' << to_string(fm.level) << ',' << fm.active_ids[static_cast<std::size_t>(i)]
           << ',' << fm.scores[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < fm.rows.cols(); ++j) os << ',' << fm.rows(i, j);
        os << '\n';
    }
}

}  // namespace gnnsup

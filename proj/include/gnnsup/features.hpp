#pragma once

// Feature directions: class-conditional centroids of pooled embeddings and
// logistic-probe normals, each filtered to the "active" set, plus the
// concept targets the probes are trained on.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gnnsup/geometry.hpp"
#include "gnnsup/graphgen.hpp"

namespace gnnsup {

enum class FeatureKind { Centroid, Probe };
enum class Level { Node, Graph };

std::string to_string(FeatureKind k);
std::string to_string(Level l);

inline constexpr double kProbeAucThreshold = 0.60;
inline constexpr double kInClassRecall = 0.5;
inline constexpr double kProbeL2 = 1e-4;

/// recall(l, j): fraction of graphs whose label is exactly e_l that are
/// predicted positive for class j. Rows without one-hot exemplars are
/// undefined.
struct RecallMatrix {
    Matrix values;
    std::vector<bool> defined;
};

/// predictions: 0/1 matrix (graphs x classes); targets: multi-hot labels.
RecallMatrix recall_matrix(const Matrix& predictions, const Matrix& targets);

/// Active iff row defined, in-class recall >= 0.5 and every off-class recall < 0.5.
bool class_active(const RecallMatrix& recall, int cls);

struct FeatureMatrix {
    /// Unnormalized directions (centroids or probe normals), k_a x d.
    Matrix raw;
    /// raw with unit rows.
    Matrix rows;
    FeatureKind kind = FeatureKind::Centroid;
    Level level = Level::Graph;
    std::vector<int> active_ids;
    /// In-class recall (centroids) or held-out AUC (probes) per active row.
    std::vector<double> scores;
    std::string provenance;

    int k_a() const { return static_cast<int>(active_ids.size()); }
};

struct ProbeResult {
    int concept_id = 0;
    Vector normal;
    double intercept = 0.0;
    double auc = 0.5;
    bool converged = false;
    int iterations = 0;
};

enum class ConceptFamily { Is, NextTo, Inside, Has };

struct ConceptSpec {
    ConceptFamily family = ConceptFamily::Is;
    /// Type id t (Is/NextTo) or cycle length (Inside/Has).
    int parameter = 0;

    Level level() const { return family == ConceptFamily::Has ? Level::Graph : Level::Node; }
    std::string name() const;
};

/// Binary targets for one concept. Node-level concepts return one entry per
/// node of every graph, graphs in dataset order; graph-level concepts one
/// entry per graph.
std::vector<int> concept_targets(const Dataset& data, const ConceptSpec& spec);

/// Probability that a random positive outranks a random negative, ties = 1/2.
double auc(std::span<const double> scores, std::span<const int> labels);

/// L2-regularized logistic regression fit on rows with is_train = true; AUC
/// on the remaining rows. Throws SingleClass if either part lacks a class.
ProbeResult fit_probe(const Matrix& z, std::span<const int> labels, const std::vector<bool>& is_train,
                      double l2 = kProbeL2);

/// Mean embedding per one-hot class, restricted to active classes.
FeatureMatrix class_centroids(const Matrix& embeddings, const Matrix& targets, const RecallMatrix& recall);

/// Probes with AUC >= threshold, normals unit-normalized, intercepts dropped.
FeatureMatrix probe_feature_matrix(const std::vector<ProbeResult>& probes, Level level,
                                   double threshold = kProbeAucThreshold);

/// CSV: kind,level,concept_id,auc_or_recall,x0..x{d-1} (unit row).
void write_feature_matrix_csv(std::ostream& os, const FeatureMatrix& fm);

}  // namespace gnnsup

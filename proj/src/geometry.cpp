#include "gnnsup/geometry.hpp"

namespace gnnsup {

std::string to_string(FeatureFamily f) {
    switch (f) {
    case FeatureFamily::Centroid: return "centroid";
    case FeatureFamily::GraphProbe: return "graph_probe";
    case FeatureFamily::NodeProbe: return "node_probe";
    }
    return "?";
}

std::string to_string(ObtuseRegime r) {
    switch (r) {
    case ObtuseRegime::UnderComplete: return "UnderComplete";
    case ObtuseRegime::SimplexThreshold: return "SimplexThreshold";
    case ObtuseRegime::Intermediate: return "Intermediate";
    case ObtuseRegime::OverComplete: return "OverComplete";
    }
    return "?";
}

ObtuseRegime obtuse_regime(int n, int d) {
    if (n < 1 || d < 1) throw Error(ErrorCode::InvalidConfig, "obtuse_regime needs n >= 1 and d >= 1");
    if (n <= d) return ObtuseRegime::UnderComplete;
    if (n == d + 1) return ObtuseRegime::SimplexThreshold;
    if (n <= 2 * d) return ObtuseRegime::Intermediate;
    return ObtuseRegime::OverComplete;
}

GeometryReport geometry_report(const Matrix& unit_rows, FeatureFamily family) {
    GeometryReport rep;
    rep.k_a = static_cast<int>(unit_rows.rows());
    if (rep.k_a == 0) return rep;
    const bool centroid = family == FeatureFamily::Centroid;
    rep.effrank = eff_rank(unit_rows, centroid ? Centering::Com : Centering::None);
    rep.si = superposition_index(rep.k_a, rep.effrank);
    const auto wno = wno_intrinsic(unit_rows, family);
    rep.wno_i = wno.value;
    rep.r = wno.r;
    if (centroid) {
        const Matrix centered = com_center(unit_rows);
        bool nonzero = true;
        for (Eigen::Index i = 0; i < centered.rows(); ++i) nonzero = nonzero && centered.row(i).norm() > 1e-12;
        if (nonzero) rep.ai = alignment_index(centered);
    } else {
        rep.ai = alignment_index(unit_rows);
    }
    const auto cos = cosine_matrix(unit_rows);
    rep.cosine = cos.cos;
    rep.abs_cosine = cos.abs_cos;
    return rep;
}

}  // namespace gnnsup

#include "gnnsup/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "gnnsup/json_io.hpp"
#include "gnnsup/rng.hpp"

namespace gnnsup {

namespace {

const std::vector<std::pair<Study, std::string>>& study_names() {
    static const std::vector<std::pair<Study, std::string>> names{{Study::WidthSweep, "width_sweep"},
                                                                  {Study::ConjunctionStudy, "conjunction_study"},
                                                                  {Study::PoolingSweep, "pooling_sweep"},
                                                                  {Study::RankTrack, "rank_track"},
                                                                  {Study::NoiseProbe, "noise_probe"}};
    return names;
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

std::string num(double v) {
    if (std::isnan(v)) return "NA";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string num(const std::optional<double>& v) { return v ? num(*v) : "NA"; }

std::string flag(const std::optional<bool>& v) {
    if (!v) return "NA";
    return *v ? "1" : "0";
}

}  // namespace

std::string to_string(Study s) {
    for (const auto& [k, name] : study_names())
        if (k == s) return name;
    return "unknown";
}

Study study_from_string(const std::string& s) {
    for (const auto& [k, name] : study_names())
        if (name == s) return k;
    throw Error(ErrorCode::InvalidConfig, "unknown study '" + s + "'");
}

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw Error(ErrorCode::InvalidConfig, "seed list is empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw Error(ErrorCode::InvalidConfig, "seeds must be distinct");
    if (study == Study::NoiseProbe) {
        if (noise.trials < 2 || noise.nodes < 1 || noise.dim < 2 || noise.angle_step_deg < 1 || !(noise.noise_energy >= 0))
            throw Error(ErrorCode::InvalidConfig, "noise probe parameters");
        return;
    }
    if (archs.empty()) throw Error(ErrorCode::InvalidConfig, "arch list is empty");
    if (family == Family::Pairwise)
        pairwise.validate();
    else
        conjunction.validate();
    train.validate();
    if ((study == Study::WidthSweep || study == Study::PoolingSweep) && widths.empty())
        throw Error(ErrorCode::InvalidConfig, "width list is empty");
    for (int w : widths)
        if (w < 1) throw Error(ErrorCode::InvalidConfig, "widths must be >= 1");
    if (study == Study::PoolingSweep) {
        if (pool_p.empty()) throw Error(ErrorCode::InvalidConfig, "pooling p grid is empty");
        for (double p : pool_p)
            if (!(p >= 1.0)) throw Error(ErrorCode::InvalidConfig, "pooling p must be >= 1");
    }
    if (study == Study::ConjunctionStudy) {
        if (family != Family::Conjunction) throw Error(ErrorCode::InvalidConfig, "conjunction study needs CONJUNCTION data");
        if (pool_kinds.empty()) throw Error(ErrorCode::InvalidConfig, "pool kind list is empty");
    } else if (family != Family::Pairwise) {
        throw Error(ErrorCode::InvalidConfig, to_string(study) + " needs PAIRWISE data");
    }
    if (study == Study::RankTrack && final_activations.empty())
        throw Error(ErrorCode::InvalidConfig, "final activation list is empty");
    for (const auto& c : node_concepts) {
        const bool ok = family == Family::Pairwise ? (c == "is" || c == "next_to") : c == "inside";
        if (!ok) throw Error(ErrorCode::InvalidConfig, "node concept '" + c + "' does not fit the dataset");
    }
    if (graph_probes && family != Family::Conjunction)
        throw Error(ErrorCode::InvalidConfig, "graph probes need CONJUNCTION data");
    for (const auto& spec : plan_runs(*this)) spec.model.validate();
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    std::vector<std::string> archs, kinds, acts;
    for (Arch a : c.archs) archs.push_back(to_string(a));
    for (PoolKind k : c.pool_kinds) kinds.push_back(to_string(k));
    for (Activation a : c.final_activations) acts.push_back(to_string(a));
    j = nlohmann::json{{"study", to_string(c.study)},
                       {"family", to_string(c.family)},
                       {"pairwise", c.pairwise},
                       {"conjunction", c.conjunction},
                       {"data_seed", c.data_seed},
                       {"model", c.model},
                       {"train", c.train},
                       {"archs", archs},
                       {"widths", c.widths},
                       {"pool_kinds", kinds},
                       {"pool_p", c.pool_p},
                       {"final_activations", acts},
                       {"seeds", c.seeds},
                       {"node_concepts", c.node_concepts},
                       {"graph_probes", c.graph_probes},
                       {"noise",
                        {{"trials", c.noise.trials},
                         {"nodes", c.noise.nodes},
                         {"dim", c.noise.dim},
                         {"noise_energy", c.noise.noise_energy},
                         {"angle_step_deg", c.noise.angle_step_deg}}}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    if (j.contains("study")) {
        // Start from the study's defaults so a config only lists what it changes.
        c = default_config(study_from_string(j.at("study").get<std::string>()));
    }
    if (j.contains("family")) c.family = family_from_string(j.at("family").get<std::string>());
    read_opt(j, "pairwise", c.pairwise);
    read_opt(j, "conjunction", c.conjunction);
    read_opt(j, "data_seed", c.data_seed);
    read_opt(j, "model", c.model);
    read_opt(j, "train", c.train);
    if (j.contains("archs")) {
        c.archs.clear();
        for (const auto& s : j.at("archs")) c.archs.push_back(arch_from_string(s.get<std::string>()));
    }
    read_opt(j, "widths", c.widths);
    if (j.contains("pool_kinds")) {
        c.pool_kinds.clear();
        for (const auto& s : j.at("pool_kinds")) c.pool_kinds.push_back(pool_kind_from_string(s.get<std::string>()));
    }
    read_opt(j, "pool_p", c.pool_p);
    if (j.contains("final_activations")) {
        c.final_activations.clear();
        for (const auto& s : j.at("final_activations"))
            c.final_activations.push_back(activation_from_string(s.get<std::string>()));
    }
    if (j.contains("seeds")) {
        const auto& s = j.at("seeds");
        c.seeds = s.is_string() ? parse_seed_range(s.get<std::string>()) : s.get<std::vector<std::uint64_t>>();
    }
    read_opt(j, "node_concepts", c.node_concepts);
    read_opt(j, "graph_probes", c.graph_probes);
    if (j.contains("noise")) {
        const auto& n = j.at("noise");
        read_opt(n, "trials", c.noise.trials);
        read_opt(n, "nodes", c.noise.nodes);
        read_opt(n, "dim", c.noise.dim);
        read_opt(n, "noise_energy", c.noise.noise_energy);
        read_opt(n, "angle_step_deg", c.noise.angle_step_deg);
    }
}

ExperimentConfig default_config(Study s) {
    ExperimentConfig c;
    c.study = s;
    c.pairwise.num_types = 8;
    c.pairwise.activation_prob = 1.0;
    c.pairwise.chain_length = 17;
    c.pairwise.num_graphs = 800;
    c.pairwise.train_fraction = 0.5;
    c.train.epochs = 300;
    c.train.lr = 1e-2;
    c.seeds.clear();
    for (std::uint64_t k = 0; k < 10; ++k) c.seeds.push_back(k);
    switch (s) {
    case Study::WidthSweep:
        c.model.layer_widths = {8, 8};
        c.widths = {2, 4, 8, 16, 32};
        c.node_concepts = {"is", "next_to"};
        break;
    case Study::PoolingSweep:
        c.model.layer_widths = {8, 22};
        c.model.pooling = {PoolKind::PowerMean, 1.0, PoolScope::Global, 1e-6};
        c.widths = {10, 22};
        c.node_concepts = {"next_to"};
        break;
    case Study::RankTrack:
        c.archs = {Arch::GIN};
        c.model.layer_widths = {8, 16};
        c.final_activations = {Activation::Relu, Activation::LeakyRelu};
        c.train.snapshot_every = 25;
        break;
    case Study::ConjunctionStudy:
        c.family = Family::Conjunction;
        c.conjunction.num_graphs = 600;
        c.conjunction.train_fraction = 0.5;
        c.model.layer_widths = {16, 16, 16};
        c.archs = {Arch::GCN, Arch::GIN, Arch::GATV2};
        c.pool_kinds = {PoolKind::Mean, PoolKind::Max};
        c.node_concepts = {"inside"};
        c.graph_probes = true;
        c.train.epochs = 1000;
        break;
    case Study::NoiseProbe:
        c.seeds = {0};
        break;
    }
    return c;
}

std::vector<std::uint64_t> parse_seed_range(const std::string& text) {
    auto parse = [&](const std::string& s) {
        std::uint64_t v = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty())
            throw Error(ErrorCode::InvalidConfig, "bad seed '" + s + "'");
        return v;
    };
    std::vector<std::uint64_t> out;
    const auto dots = text.find("..");
    if (dots != std::string::npos) {
        const std::uint64_t a = parse(text.substr(0, dots));
        const std::uint64_t b = parse(text.substr(dots + 2));
        if (b < a) throw Error(ErrorCode::InvalidConfig, "empty seed range '" + text + "'");
        for (std::uint64_t s = a; s <= b; ++s) out.push_back(s);
        return out;
    }
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse(item));
    if (out.empty()) throw Error(ErrorCode::InvalidConfig, "empty seed list");
    return out;
}

Dataset make_dataset(const ExperimentConfig& cfg) {
    return cfg.family == Family::Pairwise ? gen_pairwise(cfg.pairwise, cfg.data_seed)
                                          : gen_conjunction(cfg.conjunction, cfg.data_seed);
}

std::vector<RunSpec> plan_runs(const ExperimentConfig& cfg) {
    std::vector<RunSpec> out;
    ModelConfig base = cfg.model;
    if (cfg.family == Family::Pairwise) {
        base.input_dim = cfg.pairwise.num_types;
        base.num_outputs = cfg.pairwise.num_types;
    } else {
        base.input_dim = 1;
        base.num_outputs = 2;
    }
    auto push = [&](Arch arch, ModelConfig m) {
        m.arch = arch;
        for (std::uint64_t seed : cfg.seeds) {
            RunSpec r;
            r.index = static_cast<int>(out.size());
            r.arch = arch;
            r.model = m;
            r.seed = seed;
            out.push_back(r);
        }
    };
    switch (cfg.study) {
    case Study::WidthSweep:
        for (int d : cfg.widths)
            for (Arch a : cfg.archs) {
                ModelConfig m = base;
                if (m.layer_widths.size() < 2) m.layer_widths.assign(2, 0);
                m.layer_widths.front() = base.input_dim;
                m.layer_widths.back() = d;
                push(a, m);
            }
        break;
    case Study::PoolingSweep:
        for (int d : cfg.widths)
            for (double p : cfg.pool_p)
                for (Arch a : cfg.archs) {
                    ModelConfig m = base;
                    m.layer_widths.back() = d;
                    m.pooling.kind = PoolKind::PowerMean;
                    m.pooling.p = p;
                    push(a, m);
                }
        break;
    case Study::ConjunctionStudy:
        for (Arch a : cfg.archs)
            for (PoolKind k : cfg.pool_kinds) {
                ModelConfig m = base;
                m.pooling.kind = k;
                push(a, m);
            }
        break;
    case Study::RankTrack:
        for (Activation act : cfg.final_activations)
            for (Arch a : cfg.archs) {
                ModelConfig m = base;
                m.final_activation = act;
                m.gin_activation = act;
                push(a, m);
            }
        break;
    case Study::NoiseProbe: break;
    }
    return out;
}

namespace {

std::vector<ConceptSpec> node_concept_list(const ExperimentConfig& cfg) {
    std::vector<ConceptSpec> out;
    for (const auto& name : cfg.node_concepts) {
        if (name == "is")
            for (int t = 0; t < cfg.pairwise.num_types; ++t) out.push_back({ConceptFamily::Is, t});
        else if (name == "next_to")
            for (int t = 0; t < cfg.pairwise.num_types; ++t) out.push_back({ConceptFamily::NextTo, t});
        else
            for (int len : ConjunctionConfig::motif_lengths) out.push_back({ConceptFamily::Inside, len});
    }
    return out;
}

std::string family_label(ConceptFamily f) {
    switch (f) {
    case ConceptFamily::Is: return "probe_is";
    case ConceptFamily::NextTo: return "probe_next_to";
    case ConceptFamily::Inside: return "probe_inside";
    case ConceptFamily::Has: return "probe_has";
    }
    return "probe";
}

FeatureResult analyse(std::string name, FeatureFamily family, FeatureMatrix fm, std::vector<std::string> names) {
    FeatureResult fr;
    fr.name = std::move(name);
    fr.level = fm.level;
    fr.family = family;
    fr.report = geometry_report(fm.rows, family);
    if (fr.report.k_a >= 2) fr.cos09 = cosine_threshold(fr.report.abs_cosine, 0.9);
    for (int id : fm.active_ids) fr.concept_names.push_back(names.at(static_cast<std::size_t>(id)));
    fr.features = std::move(fm);
    return fr;
}

// Fits one probe per concept (same family) and keeps the active ones.
FeatureResult probe_family(const std::string& name, Level level, const Matrix& z,
                           const std::vector<std::vector<int>>& targets, const std::vector<bool>& is_train,
                           const std::vector<std::string>& names) {
    std::vector<ProbeResult> probes;
    for (std::size_t c = 0; c < targets.size(); ++c) {
        try {
            ProbeResult p = fit_probe(z, targets[c], is_train);
            p.concept_id = static_cast<int>(c);
            probes.push_back(std::move(p));
        } catch (const Error& e) {
            if (e.code() != ErrorCode::SingleClass) throw;
        }
    }
    FeatureMatrix fm = probe_feature_matrix(probes, level);
    if (fm.raw.cols() == 0) fm.raw.resize(0, z.cols()), fm.rows.resize(0, z.cols());
    return analyse(name, level == Level::Node ? FeatureFamily::NodeProbe : FeatureFamily::GraphProbe, std::move(fm),
                   names);
}

}  // namespace

RunResult execute_run(const ExperimentConfig& cfg, const Dataset& data, const RunSpec& spec) {
    RunResult out;
    out.spec = spec;
    try {
        TrainConfig tc = cfg.train;
        tc.seed = spec.seed;
        out.record = train(init_model(spec.model, spec.seed), data, tc);
        if (out.record.failed) {
            out.failed = true;
            out.failure = out.record.failure;
            return out;
        }
        const Model& model = out.record.model;
        const std::vector<int> test_idx = data.indices(Split::Test);
        const GraphBatch test_batch = make_batch(data, test_idx);
        const ForwardTrace test_trace = forward(model, test_batch);
        const Evaluation ev = evaluate(model, test_batch);

        std::vector<std::string> class_names;
        for (int c = 0; c < data.num_classes; ++c)
            class_names.push_back(data.family == Family::Pairwise ? "y_" + std::to_string(c)
                                                                  : std::string(c == 0 ? "y_A" : "y_B"));
        FeatureResult centroids = analyse("centroid", FeatureFamily::Centroid,
                                          class_centroids(test_trace.embedding, test_batch.targets, ev.recall),
                                          class_names);
        out.centroid_k_a = centroids.report.k_a;
        out.final_rank = numerical_rank(test_trace.embedding);
        out.collapsed = is_collapsed(out.final_rank, out.centroid_k_a);
        out.features.push_back(std::move(centroids));

        const auto concepts = node_concept_list(cfg);
        if (!concepts.empty()) {
            std::vector<int> all(data.graphs.size());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
            const ForwardTrace full = forward(model, make_batch(data, all));
            const Matrix& z = full.layers.back();
            std::vector<bool> is_train;
            for (std::size_t g = 0; g < data.graphs.size(); ++g)
                is_train.insert(is_train.end(), static_cast<std::size_t>(data.graphs[g].num_nodes),
                                data.split[g] == Split::Train);
            std::size_t begin = 0;
            while (begin < concepts.size()) {
                std::size_t end = begin;
                while (end < concepts.size() && concepts[end].family == concepts[begin].family) ++end;
                std::vector<std::vector<int>> targets;
                std::vector<std::string> names;
                for (std::size_t c = begin; c < end; ++c) {
                    targets.push_back(concept_targets(data, concepts[c]));
                    names.push_back(concepts[c].name());
                }
                out.features.push_back(
                    probe_family(family_label(concepts[begin].family), Level::Node, z, targets, is_train, names));
                begin = end;
            }
            if (cfg.graph_probes) {
                std::vector<std::vector<int>> targets;
                std::vector<std::string> names;
                for (int len : ConjunctionConfig::motif_lengths) {
                    const ConceptSpec has{ConceptFamily::Has, len};
                    targets.push_back(concept_targets(data, has));
                    names.push_back(has.name());
                }
                std::vector<bool> graph_train;
                for (Split s : data.split) graph_train.push_back(s == Split::Train);
                out.features.push_back(
                    probe_family("probe_has", Level::Graph, full.embedding, targets, graph_train, names));
            }
        }
    } catch (const std::exception& e) {
        out.failed = true;
        out.failure = e.what();
        out.features.clear();
    }
    return out;
}

namespace {

double column_std(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

NoiseResult run_noise_probe(const NoiseProbeConfig& cfg, std::uint64_t seed) {
    NoiseResult out;
    const int n = cfg.nodes, d = cfg.dim, trials = cfg.trials;
    std::vector<std::vector<double>> mean_pooled(static_cast<std::size_t>(d)), max_pooled(static_cast<std::size_t>(d));
    std::vector<std::vector<double>> const_mean(static_cast<std::size_t>(d)), const_max(static_cast<std::size_t>(d));
    for (int t = 0; t < trials; ++t) {
        Rng rng(seed, static_cast<std::uint64_t>(t));
        Matrix x(n, d);
        for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = rng.normal();
        const Matrix c = Matrix::Constant(n, d, 0.5);
        for (int j = 0; j < d; ++j) {
            mean_pooled[static_cast<std::size_t>(j)].push_back(x.col(j).mean());
            max_pooled[static_cast<std::size_t>(j)].push_back(x.col(j).maxCoeff());
            const_mean[static_cast<std::size_t>(j)].push_back(c.col(j).mean());
            const_max[static_cast<std::size_t>(j)].push_back(c.col(j).maxCoeff());
        }
    }
    double sum_mean = 0.0, sum_max = 0.0, var_mean = 0.0, var_max = 0.0;
    for (int j = 0; j < d; ++j) {
        const double a = column_std(mean_pooled[static_cast<std::size_t>(j)]);
        const double b = column_std(max_pooled[static_cast<std::size_t>(j)]);
        out.std_mean.push_back(a);
        out.std_max.push_back(b);
        sum_mean += a;
        sum_max += b;
        var_mean += a * a;
        var_max += b * b;
        out.constant_std_mean = std::max(out.constant_std_mean, column_std(const_mean[static_cast<std::size_t>(j)]));
        out.constant_std_max = std::max(out.constant_std_max, column_std(const_max[static_cast<std::size_t>(j)]));
    }
    out.std_ratio = sum_max / sum_mean;
    out.variance_ratio = var_max / var_mean;

    // Every node carries the unit vector v(theta) in the (e0, e1) plane plus
    // isotropic noise of the given expected energy per node.
    const double sigma = std::sqrt(cfg.noise_energy / static_cast<double>(d));
    double axis_circle = 0.0, oblique_circle = 0.0;
    int axis_count = 0, oblique_count = 0;
    for (int deg = 0; deg < 360; deg += cfg.angle_step_deg) {
        const double theta = static_cast<double>(deg) * std::numbers::pi / 180.0;
        Vector v = Vector::Zero(d);
        v(0) = std::cos(theta);
        v(1) = std::sin(theta);
        std::vector<double> cosines;
        for (int t = 0; t < trials; ++t) {
            Rng rng(seed ^ 0xA5A5A5A5ULL, static_cast<std::uint64_t>(t));
            Matrix x = v.transpose().replicate(n, 1);
            for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] += sigma * rng.normal();
            const Vector pooled = x.colwise().maxCoeff().transpose();
            cosines.push_back(pooled.dot(v) / pooled.norm());
        }
        double mean = 0.0;
        for (double c : cosines) mean += c;
        mean /= static_cast<double>(trials);
        out.angles.push_back({deg, mean, column_std(cosines)});
        if (deg % 90 == 0) axis_circle += mean, ++axis_count;
        if (deg % 90 == 45) oblique_circle += mean, ++oblique_count;
        if (deg == 0) out.axis_cos = mean;
        if (deg == 45) out.oblique_cos = mean;
    }
    out.axis_cos_circle = axis_count ? axis_circle / axis_count : std::nan("");
    out.oblique_cos_circle = oblique_count ? oblique_circle / oblique_count : std::nan("");
    if (!oblique_count) out.oblique_cos = std::nan("");
    return out;
}

StudyResult run_study(const ExperimentConfig& cfg, int jobs) {
    cfg.validate();
    StudyResult result;
    result.config = cfg;
    if (cfg.study == Study::NoiseProbe) {
        result.noise = run_noise_probe(cfg.noise, cfg.seeds.front());
        return result;
    }
    const Dataset data = make_dataset(cfg);
    const std::vector<RunSpec> plan = plan_runs(cfg);
    result.runs.resize(plan.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next++; i < plan.size(); i = next++) result.runs[i] = execute_run(cfg, data, plan[i]);
    };
    const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(plan.size())));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return result;
}

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

const std::vector<std::string>& geometry_columns() {
    static const std::vector<std::string> cols{
        "run",        "study",        "arch",         "width",      "pool_kind",   "pool_p",      "pool_scope",
        "final_activation", "seed",   "features",     "level",      "k_a",         "active",      "effrank",
        "si",         "wno_i",        "ai",           "r",          "cos_any_0p9", "cos_all_0p9", "train_acc",
        "test_acc",   "test_exact",   "perfect_test", "r_tau",      "r_eta",       "dead_columns", "collapsed"};
    return cols;
}

namespace {

nlohmann::ordered_json run_tags(const ExperimentConfig& cfg, const RunSpec& s) {
    nlohmann::ordered_json t;
    t["run"] = s.index;
    t["study"] = to_string(cfg.study);
    t["arch"] = to_string(s.arch);
    t["width"] = s.model.layer_widths.back();
    t["pool_kind"] = to_string(s.model.pooling.kind);
    t["pool_p"] = s.model.pooling.p;
    t["pool_scope"] = to_string(s.model.pooling.scope);
    t["final_activation"] = to_string(s.model.final_activation);
    t["seed"] = s.seed;
    return t;
}

std::string config_prefix(const ExperimentConfig& cfg, const RunSpec& s) {
    std::ostringstream os;
    os << to_string(s.arch) << ',' << s.model.layer_widths.back() << ',' << to_string(s.model.pooling.kind) << ','
       << num(s.model.pooling.p) << ',' << to_string(s.model.pooling.scope) << ','
       << to_string(s.model.final_activation);
    (void)cfg;
    return os.str();
}

struct Moments {
    double sum = 0.0, sum2 = 0.0;
    int n = 0;
    void add(double v) { sum += v, sum2 += v * v, ++n; }
    void add(const std::optional<double>& v) {
        if (v) add(*v);
    }
    std::string mean() const { return n ? num(sum / n) : "NA"; }
    std::string sd() const {
        if (n < 2) return "NA";
        const double m = sum / n;
        return num(std::sqrt(std::max(0.0, (sum2 - n * m * m) / (n - 1))));
    }
};

struct Group {
    int runs = 0, failed = 0, rows = 0;
    Moments k_a, effrank, si, wno, ai, test_acc, dead, r_tau;
    int cos_n = 0, cos_any = 0, cos_all = 0, collapsed = 0, perfect = 0;
};

void write_geometry_csv(std::ostream& os, const StudyResult& res) {
    const auto& cols = geometry_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    for (const auto& run : res.runs) {
        if (run.failed) continue;
        const auto& ep = run.record.epochs.back();
        for (const auto& f : run.features) {
            std::string active;
            for (std::size_t i = 0; i < f.concept_names.size(); ++i) active += (i ? ";" : "") + f.concept_names[i];
            std::optional<bool> any, all;
            if (f.cos09) any = f.cos09->any, all = f.cos09->all;
            os << run.spec.index << ',' << to_string(res.config.study) << ',' << config_prefix(res.config, run.spec)
               << ',' << run.spec.seed << ',' << f.name << ',' << to_string(f.level) << ',' << f.report.k_a << ','
               << active << ',' << num(f.report.effrank) << ',' << num(f.report.si) << ',' << num(f.report.wno_i)
               << ',' << num(f.report.ai) << ',' << f.report.r << ',' << flag(any) << ',' << flag(all) << ','
               << num(ep.train_acc) << ',' << num(ep.test_acc) << ',' << num(ep.test_exact) << ','
               << (ep.test_exact == 1.0 ? 1 : 0) << ',' << run.final_rank.r_tau << ',' << run.final_rank.r_eta << ','
               << run.final_rank.dead_columns << ',' << (run.collapsed ? 1 : 0) << '\n';
        }
    }
}

void write_aggregate_csv(std::ostream& os, const StudyResult& res) {
    os << "arch,width,pool_kind,pool_p,pool_scope,final_activation,features,runs,failed,rows,mean_k_a,mean_effrank,"
          "mean_si,std_si,n_si,mean_wno_i,std_wno_i,n_wno_i,mean_ai,std_ai,n_ai,n_cos,frac_cos_any_0p9,"
          "frac_cos_all_0p9,mean_test_acc,frac_perfect_test,mean_r_tau,mean_dead_columns,frac_collapsed\n";
    std::vector<std::string> order;
    std::map<std::string, Group> groups;
    std::map<std::string, std::pair<int, int>> per_config;  // runs, failed
    std::vector<std::string> feature_names;
    for (const auto& run : res.runs) {
        auto& pc = per_config[config_prefix(res.config, run.spec)];
        ++pc.first;
        if (run.failed) ++pc.second;
        for (const auto& f : run.features)
            if (std::find(feature_names.begin(), feature_names.end(), f.name) == feature_names.end())
                feature_names.push_back(f.name);
    }
    for (const auto& run : res.runs) {
        const std::string prefix = config_prefix(res.config, run.spec);
        for (const auto& name : feature_names) {
            const std::string key = prefix + "," + name;
            if (!groups.count(key)) order.push_back(key);
            Group& g = groups[key];
            if (run.failed) continue;
            for (const auto& f : run.features) {
                if (f.name != name) continue;
                const auto& ep = run.record.epochs.back();
                ++g.rows;
                g.k_a.add(static_cast<double>(f.report.k_a));
                if (f.report.k_a > 0) g.effrank.add(f.report.effrank);
                g.si.add(f.report.si);
                g.wno.add(f.report.wno_i);
                g.ai.add(f.report.ai);
                g.test_acc.add(ep.test_acc);
                g.dead.add(static_cast<double>(run.final_rank.dead_columns));
                g.r_tau.add(static_cast<double>(run.final_rank.r_tau));
                if (f.cos09) {
                    ++g.cos_n;
                    g.cos_any += f.cos09->any;
                    g.cos_all += f.cos09->all;
                }
                g.collapsed += run.collapsed;
                g.perfect += ep.test_exact == 1.0;
            }
        }
    }
    for (const auto& key : order) {
        const Group& g = groups[key];
        const std::string prefix = key.substr(0, key.rfind(','));
        const auto& pc = per_config[prefix];
        auto frac = [](int a, int n) { return n ? num(static_cast<double>(a) / n) : std::string("NA"); };
        os << key << ',' << pc.first << ',' << pc.second << ',' << g.rows << ',' << g.k_a.mean() << ','
           << g.effrank.mean() << ',' << g.si.mean() << ',' << g.si.sd() << ',' << g.si.n << ',' << g.wno.mean()
           << ',' << g.wno.sd() << ',' << g.wno.n << ',' << g.ai.mean() << ',' << g.ai.sd() << ',' << g.ai.n << ','
           << g.cos_n << ',' << frac(g.cos_any, g.cos_n) << ',' << frac(g.cos_all, g.cos_n) << ','
           << g.test_acc.mean() << ',' << frac(g.perfect, g.rows) << ',' << g.r_tau.mean() << ',' << g.dead.mean()
           << ',' << frac(g.collapsed, g.rows) << '\n';
    }
}

void write_cosine_csv(std::ostream& os, const StudyResult& res) {
    os << "arch,pool_kind,features,concept_i,concept_j,n,mean_cos,mean_abs_cos\n";
    struct Acc {
        double cos = 0.0, abs = 0.0;
        int n = 0;
    };
    std::vector<std::string> order;
    std::map<std::string, Acc> acc;
    for (const auto& run : res.runs) {
        if (run.failed) continue;
        for (const auto& f : run.features) {
            if (f.family == FeatureFamily::Centroid) continue;
            const auto& names = f.concept_names;
            for (std::size_t i = 0; i < names.size(); ++i)
                for (std::size_t j = 0; j < names.size(); ++j) {
                    const std::string key = to_string(run.spec.arch) + "," + to_string(run.spec.model.pooling.kind) +
                                            "," + f.name + "," + names[i] + "," + names[j];
                    if (!acc.count(key)) order.push_back(key);
                    Acc& a = acc[key];
                    const double c = f.report.cosine(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                    a.cos += c;
                    a.abs += std::abs(c);
                    ++a.n;
                }
        }
    }
    for (const auto& key : order) {
        const Acc& a = acc[key];
        os << key << ',' << a.n << ',' << num(a.cos / a.n) << ',' << num(a.abs / a.n) << '\n';
    }
}

void write_noise(const NoiseResult& nr, const NoiseProbeConfig& cfg, const std::string& dir) {
    std::ofstream noise(dir + "/noise.csv");
    noise << "metric,value\n";
    noise << "trials," << cfg.trials << "\nnodes," << cfg.nodes << "\ndim," << cfg.dim << '\n';
    noise << "noise_energy," << num(cfg.noise_energy) << '\n';
    noise << "std_ratio_max_over_mean," << num(nr.std_ratio) << '\n';
    noise << "variance_ratio_max_over_mean," << num(nr.variance_ratio) << '\n';
    noise << "constant_std_mean," << num(nr.constant_std_mean) << '\n';
    noise << "constant_std_max," << num(nr.constant_std_max) << '\n';
    noise << "axis_cos," << num(nr.axis_cos) << '\n';
    noise << "oblique_cos," << num(nr.oblique_cos) << '\n';
    noise << "axis_cos_circle," << num(nr.axis_cos_circle) << '\n';
    noise << "oblique_cos_circle," << num(nr.oblique_cos_circle) << '\n';
    for (std::size_t j = 0; j < nr.std_mean.size(); ++j) {
        noise << "std_mean_c" << j << ',' << num(nr.std_mean[j]) << '\n';
        noise << "std_max_c" << j << ',' << num(nr.std_max[j]) << '\n';
    }
    std::ofstream angles(dir + "/angles.csv");
    angles << "angle_deg,mean_cos,std_cos,trials,noise_energy\n";
    for (const auto& a : nr.angles)
        angles << a.angle_deg << ',' << num(a.mean_cos) << ',' << num(a.std_cos) << ',' << cfg.trials << ','
               << num(cfg.noise_energy) << '\n';
}

}  // namespace

void write_study(const StudyResult& res, const std::string& dir) {
    std::filesystem::create_directories(dir);
    auto open = [&](const std::string& name) {
        std::ofstream f(dir + "/" + name);
        if (!f) throw Error(ErrorCode::Io, "cannot write " + dir + "/" + name);
        return f;
    };
    {
        nlohmann::json j = res.config;
        auto f = open("config.json");
        f << j.dump(2) << '\n';
    }
    if (res.noise) {
        write_noise(*res.noise, res.config.noise, dir);
        return;
    }
    {
        auto f = open("runs.jsonl");
        for (const auto& run : res.runs) write_run_jsonl(f, run.record, run_tags(res.config, run.spec));
    }
    {
        auto f = open("failures.jsonl");
        for (const auto& run : res.runs) {
            if (!run.failed) continue;
            nlohmann::ordered_json line = run_tags(res.config, run.spec);
            line["reason"] = run.failure;
            f << line.dump() << '\n';
        }
    }
    {
        auto f = open("geometry.csv");
        write_geometry_csv(f, res);
    }
    {
        auto f = open("aggregate.csv");
        write_aggregate_csv(f, res);
    }
    if (res.config.study == Study::ConjunctionStudy) {
        auto f = open("cosine.csv");
        write_cosine_csv(f, res);
    }
}

}  // namespace gnnsup

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "gnnsup/experiments.hpp"
#include "gnnsup/json_io.hpp"

using namespace gnnsup;

namespace {

struct Common {
    std::string config;
    std::string out = "out";
    std::string seeds;
    std::vector<std::string> archs;
    int jobs = 1;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "JSON experiment config");
    cmd->add_option("--out", c.out, "output directory");
    cmd->add_option("--seeds", c.seeds, "seed range a..b or list a,b,c");
    cmd->add_option("--arch", c.archs, "architecture(s): gcn, gin, gatv2");
    cmd->add_option("--jobs", c.jobs, "worker threads")->check(CLI::PositiveNumber);
}

ExperimentConfig load_config(const Common& c, Study study, bool strict = true) {
    ExperimentConfig cfg = default_config(study);
    if (!c.config.empty()) {
        std::ifstream in(c.config);
        if (!in) throw Error(ErrorCode::Io, "cannot read " + c.config);
        nlohmann::json j = nlohmann::json::parse(in, nullptr, true, true);
        if (!j.contains("study")) j["study"] = to_string(study);
        cfg = j.get<ExperimentConfig>();
        if (strict && cfg.study != study)
            throw Error(ErrorCode::InvalidConfig, "config study is " + to_string(cfg.study));
    }
    if (!c.seeds.empty()) cfg.seeds = parse_seed_range(c.seeds);
    if (!c.archs.empty()) {
        cfg.archs.clear();
        for (const auto& a : c.archs) cfg.archs.push_back(arch_from_string(a));
    }
    return cfg;
}

int run_study_cmd(const Common& c, Study study) {
    const ExperimentConfig cfg = load_config(c, study);
    const StudyResult res = run_study(cfg, c.jobs);
    write_study(res, c.out);
    int failed = 0;
    for (const auto& r : res.runs) failed += r.failed;
    if (res.noise)
        std::cout << "std ratio max/mean " << res.noise->std_ratio << ", axis cos " << res.noise->axis_cos
                  << ", oblique cos " << res.noise->oblique_cos << '\n';
    else
        std::cout << res.runs.size() << " runs, " << failed << " failed\n";
    std::cout << "wrote " << c.out << '\n';
    return 0;
}

int gen_cmd(const Common& c, Study study) {
    const ExperimentConfig cfg = load_config(c, study, false);
    const Dataset data = make_dataset(cfg);
    std::filesystem::create_directories(c.out);
    std::ofstream out(c.out + "/dataset.jsonl");
    write_dataset_jsonl(out, data);
    std::cout << data.graphs.size() << " graphs -> " << c.out << "/dataset.jsonl\n";
    return 0;
}

int train_cmd(const Common& c) {
    ExperimentConfig cfg = load_config(c, Study::WidthSweep, false);
    cfg.validate();
    const Dataset data = make_dataset(cfg);
    ModelConfig base = cfg.model;
    base.input_dim = data.feature_dim;
    base.num_outputs = data.num_classes;
    std::filesystem::create_directories(c.out);
    std::ofstream runs(c.out + "/runs.jsonl");
    for (Arch arch : cfg.archs) {
        for (std::uint64_t seed : cfg.seeds) {
            ModelConfig mc = base;
            mc.arch = arch;
            TrainConfig tc = cfg.train;
            tc.seed = seed;
            const RunRecord rec = train(init_model(mc, seed), data, tc);
            nlohmann::ordered_json tags{{"arch", to_string(arch)}, {"seed", seed}};
            write_run_jsonl(runs, rec, tags);
            const std::string stem = c.out + "/" + to_string(arch) + "_" + std::to_string(seed);
            std::ofstream ck(stem + ".ckpt", std::ios::binary);
            save_checkpoint(ck, rec.model);
            const GraphBatch test = make_batch(data, data.indices(Split::Test));
            const Evaluation ev = evaluate(rec.model, test);
            const FeatureMatrix fm = class_centroids(snapshot_pooled(rec.model, test), test.targets, ev.recall);
            std::ofstream fcsv(stem + "_centroids.csv");
            write_feature_matrix_csv(fcsv, fm);
            const auto& last = rec.epochs.back();
            std::cout << to_string(arch) << " seed " << seed << ": train acc " << last.train_acc << ", test acc "
                      << last.test_acc << ", k_a " << fm.k_a() << (rec.failed ? " (failed: " + rec.failure + ")" : "")
                      << '\n';
        }
    }
    return 0;
}

int analyze_cmd(const std::string& input, const std::string& family_name) {
    std::ifstream in(input);
    if (!in) throw Error(ErrorCode::Io, "cannot read " + input);
    std::string line;
    std::getline(in, line);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        for (int col = 0; std::getline(ss, cell, ','); ++col)
            if (col >= 4) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    const Eigen::Index d = rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size());
    Matrix m(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (static_cast<Eigen::Index>(rows[i].size()) != d) throw Error(ErrorCode::ShapeMismatch, "ragged feature rows");
        for (Eigen::Index j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
    }
    FeatureFamily family = FeatureFamily::Centroid;
    if (family_name == "graph_probe") family = FeatureFamily::GraphProbe;
    else if (family_name == "node_probe") family = FeatureFamily::NodeProbe;
    else if (family_name != "centroid") throw Error(ErrorCode::InvalidConfig, "unknown family " + family_name);
    const GeometryReport rep = geometry_report(m, family);
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::ordered_json j;
    j["k_a"] = rep.k_a;
    j["effrank"] = rep.effrank;
    j["si"] = opt(rep.si);
    j["wno_i"] = opt(rep.wno_i);
    j["ai"] = opt(rep.ai);
    j["r"] = rep.r;
    if (rep.k_a >= 2) {
        const auto t = cosine_threshold(rep.abs_cosine, 0.9);
        j["cos_any_0p9"] = t->any;
        j["cos_all_0p9"] = t->all;
    }
    std::cout << j.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Superposition diagnostics for graph neural networks"};
    app.require_subcommand(1);

    Common gen, trn, width, conj, pool, rank, noise;
    std::string gen_family = "pairwise";
    auto* gen_cmd_app = app.add_subcommand("gen", "generate a dataset as JSON lines");
    add_common(gen_cmd_app, gen);
    gen_cmd_app->add_option("--family", gen_family, "pairwise or conjunction");
    auto* train_app = app.add_subcommand("train", "train models and save checkpoints");
    add_common(train_app, trn);
    auto* width_app = app.add_subcommand("sweep-width", "width sweep on PAIRWISE");
    add_common(width_app, width);
    auto* conj_app = app.add_subcommand("conjunction", "CONJUNCTION topology study");
    add_common(conj_app, conj);
    auto* pool_app = app.add_subcommand("sweep-pooling", "power-mean pooling sweep");
    add_common(pool_app, pool);
    auto* rank_app = app.add_subcommand("rank-track", "singular value and dead column tracking");
    add_common(rank_app, rank);
    auto* noise_app = app.add_subcommand("noise-probe", "pooling noise and angle diagnostics");
    add_common(noise_app, noise);
    std::string input, family = "centroid";
    auto* analyze_app = app.add_subcommand("analyze", "geometry report for a feature CSV");
    analyze_app->add_option("--input", input, "feature matrix CSV")->required();
    analyze_app->add_option("--family", family, "centroid, graph_probe or node_probe");

    CLI11_PARSE(app, argc, argv);
    tune_allocator();
    try {
        if (*gen_cmd_app)
            return gen_cmd(gen, family_from_string(gen_family) == Family::Pairwise ? Study::WidthSweep
                                                                                   : Study::ConjunctionStudy);
        if (*train_app) return train_cmd(trn);
        if (*width_app) return run_study_cmd(width, Study::WidthSweep);
        if (*conj_app) return run_study_cmd(conj, Study::ConjunctionStudy);
        if (*pool_app) return run_study_cmd(pool, Study::PoolingSweep);
        if (*rank_app) return run_study_cmd(rank, Study::RankTrack);
        if (*noise_app) return run_study_cmd(noise, Study::NoiseProbe);
        if (*analyze_app) return analyze_cmd(input, family);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

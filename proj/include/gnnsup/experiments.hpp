#pragma once

// Configuration-driven studies: width sweep, conjunction topology study,
// pooling sweep, rank tracking and the noise probe. Runs are scheduled on a
// worker pool and collected in plan order, so every output file is a pure
// function of the configuration.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gnnsup/features.hpp"
#include "gnnsup/geometry.hpp"
#include "gnnsup/graphgen.hpp"
#include "gnnsup/model.hpp"
#include "gnnsup/trainer.hpp"

namespace gnnsup {

enum class Study { WidthSweep, ConjunctionStudy, PoolingSweep, RankTrack, NoiseProbe };

std::string to_string(Study s);
Study study_from_string(const std::string& s);

struct NoiseProbeConfig {
    int trials = 1000;
    int nodes = 20;
    int dim = 16;
    /// Expected squared norm of each node's noise row, relative to a unit signal.
    double noise_energy = 1.0;
    int angle_step_deg = 15;
};

struct ExperimentConfig {
    Study study = Study::WidthSweep;
    Family family = Family::Pairwise;
    PairwiseConfig pairwise;
    ConjunctionConfig conjunction;
    std::uint64_t data_seed = 0;
    /// Template; the sweep axes overwrite arch, last width, pooling and activations.
    ModelConfig model;
    TrainConfig train;
    std::vector<Arch> archs{Arch::GCN};
    /// Width sweep: last-layer widths. Pooling sweep: the regimes.
    std::vector<int> widths;
    /// Conjunction study pooling kinds.
    std::vector<PoolKind> pool_kinds{PoolKind::Mean};
    /// Pooling sweep exponents.
    std::vector<double> pool_p{1.0, 1.5, 2.0, 4.0, 8.0};
    /// Rank tracking variants; leaky_relu also switches the GIN MLP activation.
    std::vector<Activation> final_activations{Activation::Relu};
    std::vector<std::uint64_t> seeds{0};
    /// Node-level probe families: "is", "next_to" (PAIRWISE) or "inside" (CONJUNCTION).
    std::vector<std::string> node_concepts;
    /// Fit Has(C_l) graph-level probes (CONJUNCTION).
    bool graph_probes = false;
    NoiseProbeConfig noise;

    void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Desk-scale defaults for each study.
ExperimentConfig default_config(Study s);

/// Parses "a..b" (inclusive) or a comma-separated list.
std::vector<std::uint64_t> parse_seed_range(const std::string& text);

struct RunSpec {
    int index = 0;
    Arch arch = Arch::GCN;
    ModelConfig model;
    std::uint64_t seed = 0;
};

std::vector<RunSpec> plan_runs(const ExperimentConfig& cfg);

/// One analysed feature family of one run.
struct FeatureResult {
    std::string name;
    Level level = Level::Graph;
    FeatureFamily family = FeatureFamily::Centroid;
    FeatureMatrix features;
    GeometryReport report;
    std::optional<CosineThreshold> cos09;
    std::vector<std::string> concept_names;
};

struct RunResult {
    RunSpec spec;
    RunRecord record;
    bool failed = false;
    std::string failure;
    std::vector<FeatureResult> features;
    RankProfile final_rank;
    int centroid_k_a = 0;
    bool collapsed = false;
};

/// A run is collapsed when the numerical rank of its pooled embeddings is
/// below the number of active centroid features.
inline bool is_collapsed(const RankProfile& rank, int k_a) { return rank.r_tau < k_a; }

RunResult execute_run(const ExperimentConfig& cfg, const Dataset& data, const RunSpec& spec);

struct AngleRow {
    int angle_deg = 0;
    double mean_cos = 0.0;
    double std_cos = 0.0;
};

struct NoiseResult {
    std::vector<double> std_mean;
    std::vector<double> std_max;
    /// mean_c std_max(c) / mean_c std_mean(c)
    double std_ratio = 0.0;
    double variance_ratio = 0.0;
    double constant_std_mean = 0.0;
    double constant_std_max = 0.0;
    std::vector<AngleRow> angles;
    double axis_cos = 0.0;
    double oblique_cos = 0.0;
    double axis_cos_circle = 0.0;
    double oblique_cos_circle = 0.0;
};

NoiseResult run_noise_probe(const NoiseProbeConfig& cfg, std::uint64_t seed);

struct StudyResult {
    ExperimentConfig config;
    std::vector<RunResult> runs;
    std::optional<NoiseResult> noise;
};

Dataset make_dataset(const ExperimentConfig& cfg);

/// Executes every planned run on `jobs` worker threads.
StudyResult run_study(const ExperimentConfig& cfg, int jobs = 1);

/// Writes runs.jsonl, geometry.csv, aggregate.csv, failures.jsonl (and
/// cosine.csv, noise.csv, angles.csv where applicable) into dir.
void write_study(const StudyResult& result, const std::string& dir);

/// Keeps large tape buffers on the heap between epochs instead of mapping
/// and unmapping them each time (glibc only; no-op elsewhere).
void tune_allocator();

/// Fixed column order of geometry.csv.
const std::vector<std::string>& geometry_columns();

}  // namespace gnnsup

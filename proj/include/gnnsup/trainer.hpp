#pragma once

// Full-batch BCE training with Adam, evaluation against multi-hot labels and
// scheduled snapshots of the pooled embedding matrix.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gnnsup/features.hpp"
#include "gnnsup/model.hpp"

namespace gnnsup {

struct TrainConfig {
    double lr = 1e-2;
    int epochs = 400;
    std::uint64_t seed = 0;
    /// 0 means a single snapshot after the last epoch.
    int snapshot_every = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Bias-corrected Adam with one moment pair per parameter slot.
class Adam {
public:
    explicit Adam(const TrainConfig& cfg) : cfg_(cfg) {}
    void begin_step();
    void update(std::size_t slot, Matrix& value, const Matrix& grad);
    long step() const { return step_; }

private:
    TrainConfig cfg_;
    std::vector<Matrix> m_, v_;
    long step_ = 0;
};

/// Mean over entries of the stable binary cross-entropy with logits.
double bce_with_logits(const Matrix& logits, const Matrix& targets);

struct Evaluation {
    /// Fraction of (graph, class) decisions predicted correctly.
    double accuracy = 0.0;
    /// Fraction of graphs whose whole label vector is predicted correctly.
    double exact_match = 0.0;
    double mean_loss = 0.0;
    RecallMatrix recall;
    /// 0/1 predictions, sigmoid(logit) > 0.5.
    Matrix predictions;
};

Evaluation evaluate(const Model& model, const GraphBatch& batch);
Evaluation evaluate(const Model& model, const Dataset& data, Split split);

/// Pooled embeddings h_G (after the final activation), one row per graph of the split.
Matrix snapshot_pooled(const Model& model, const Dataset& data, Split split);
Matrix snapshot_pooled(const Model& model, const GraphBatch& batch);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double test_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double train_exact = 0.0;
    double test_exact = 0.0;
};

struct Snapshot {
    int epoch = 0;
    Vector sigma;
    int k_a = 0;
    double effrank = 0.0;
    std::optional<double> si;
    std::optional<double> wno_i;
    std::optional<double> ai;
    int r_tau = 0;
    int r_eta = 0;
    int dead_columns = 0;
};

struct RunRecord {
    std::vector<EpochRecord> epochs;
    std::vector<Snapshot> snapshots;
    bool failed = false;
    std::string failure;
    Model model;
};

/// Centroid geometry and rank profile of the test-split pooled embeddings.
Snapshot take_snapshot(const Model& model, const GraphBatch& test_batch, int epoch);

/// Epoch 0 records the initial model; epochs 1..E each follow one Adam step.
/// A non-finite loss or gradient marks the run failed instead of throwing.
RunRecord train(Model model, const Dataset& data, const TrainConfig& cfg);

/// One line per epoch ("kind": "epoch") and per snapshot ("kind": "snapshot"),
/// each carrying the given tags.
void write_run_jsonl(std::ostream& os, const RunRecord& run, const nlohmann::ordered_json& tags);

}  // namespace gnnsup

#include "gnnsup/trainer.hpp"

#include <cmath>
#include <ostream>

namespace gnnsup {

void TrainConfig::validate() const {
    if (epochs < 1) throw Error(ErrorCode::InvalidConfig, "epochs must be >= 1");
    if (!(lr > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning rate must be > 0");
    if (snapshot_every < 0) throw Error(ErrorCode::InvalidConfig, "snapshot_every must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
        throw Error(ErrorCode::InvalidConfig, "adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw Error(ErrorCode::InvalidConfig, "adam eps must be > 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"lr", c.lr},           {"epochs", c.epochs}, {"seed", c.seed},
                       {"snapshot_every", c.snapshot_every}, {"beta1", c.beta1}, {"beta2", c.beta2},
                       {"adam_eps", c.adam_eps}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.lr = j.value("lr", c.lr);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.snapshot_every = j.value("snapshot_every", c.snapshot_every);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
}

double bce_with_logits(const Matrix& logits, const Matrix& targets) {
    if (logits.rows() != targets.rows() || logits.cols() != targets.cols())
        throw Error(ErrorCode::ShapeMismatch, "bce_with_logits");
    if (logits.size() == 0) return 0.0;
    double total = 0.0;
    for (Eigen::Index k = 0; k < logits.size(); ++k) total += ad::bce_term(logits.data()[k], targets.data()[k]);
    return total / static_cast<double>(logits.size());
}

namespace {

Evaluation evaluation_from_logits(const Matrix& logits, const Matrix& targets) {
    Evaluation e;
    e.predictions = (logits.array() > 0.0).cast<double>().matrix();
    e.mean_loss = bce_with_logits(logits, targets);
    int exact = 0;
    for (Eigen::Index g = 0; g < logits.rows(); ++g) exact += (e.predictions.row(g) == targets.row(g)) ? 1 : 0;
    if (logits.size() > 0) {
        e.accuracy = (e.predictions.array() == targets.array()).cast<double>().mean();
        e.exact_match = static_cast<double>(exact) / static_cast<double>(logits.rows());
    }
    e.recall = recall_matrix(e.predictions, targets);
    return e;
}

}  // namespace

void Adam::begin_step() { ++step_; }

void Adam::update(std::size_t slot, Matrix& value, const Matrix& grad) {
    if (step_ == 0) throw Error(ErrorCode::InvalidConfig, "Adam::update before begin_step");
    if (slot >= m_.size()) {
        m_.resize(slot + 1);
        v_.resize(slot + 1);
    }
    if (m_[slot].size() == 0) {
        m_[slot] = Matrix::Zero(value.rows(), value.cols());
        v_[slot] = Matrix::Zero(value.rows(), value.cols());
    }
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    m_[slot] = cfg_.beta1 * m_[slot] + (1.0 - cfg_.beta1) * grad;
    v_[slot] = cfg_.beta2 * v_[slot] + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    value.array() -= cfg_.lr * (m_[slot].array() / c1) / ((v_[slot].array() / c2).sqrt() + cfg_.adam_eps);
}

Evaluation evaluate(const Model& model, const GraphBatch& batch) {
    return evaluation_from_logits(forward(model, batch).logits, batch.targets);
}

Evaluation evaluate(const Model& model, const Dataset& data, Split split) {
    return evaluate(model, make_batch(data, data.indices(split)));
}

Matrix snapshot_pooled(const Model& model, const GraphBatch& batch) { return forward(model, batch).embedding; }

Matrix snapshot_pooled(const Model& model, const Dataset& data, Split split) {
    return snapshot_pooled(model, make_batch(data, data.indices(split)));
}

Snapshot take_snapshot(const Model& model, const GraphBatch& test_batch, int epoch) {
    const ForwardTrace trace = forward(model, test_batch);
    const Evaluation ev = evaluation_from_logits(trace.logits, test_batch.targets);
    Snapshot s;
    s.epoch = epoch;
    const RankProfile rank = numerical_rank(trace.embedding);
    s.sigma = rank.sigma;
    s.r_tau = rank.r_tau;
    s.r_eta = rank.r_eta;
    s.dead_columns = rank.dead_columns;
    const FeatureMatrix fm = class_centroids(trace.embedding, test_batch.targets, ev.recall);
    s.k_a = fm.k_a();
    if (s.k_a > 0) {
        const GeometryReport rep = geometry_report(fm.rows, FeatureFamily::Centroid);
        s.effrank = rep.effrank;
        s.si = rep.si;
        s.wno_i = rep.wno_i;
        s.ai = rep.ai;
    }
    return s;
}

RunRecord train(Model model, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (model.config.input_dim != data.feature_dim)
        throw Error(ErrorCode::ShapeMismatch, "model input width does not match dataset features");
    if (model.config.num_outputs != data.num_classes)
        throw Error(ErrorCode::ShapeMismatch, "model outputs do not match dataset classes");
    const GraphBatch train_batch = make_batch(data, data.indices(Split::Train));
    const GraphBatch test_batch = make_batch(data, data.indices(Split::Test));

    RunRecord run;
    Adam adam(cfg);
    auto snapshot_due = [&](int epoch) {
        if (epoch == cfg.epochs) return true;
        return cfg.snapshot_every > 0 && epoch % cfg.snapshot_every == 0;
    };

    try {
        for (int epoch = 0; epoch <= cfg.epochs; ++epoch) {
            ad::Tape tape;
            const ForwardVars fv = forward_on_tape(tape, model, train_batch, true);
            const ad::Var loss = ad::bce_with_logits(fv.logits, train_batch.targets);
            if (!std::isfinite(loss.value()(0, 0))) throw Error(ErrorCode::NonFinite, "training loss");
            const Evaluation tr = evaluation_from_logits(fv.logits.value(), train_batch.targets);
            const Evaluation te = evaluate(model, test_batch);
            run.epochs.push_back(
                {epoch, tr.mean_loss, te.mean_loss, tr.accuracy, te.accuracy, tr.exact_match, te.exact_match});
            if (snapshot_due(epoch)) run.snapshots.push_back(take_snapshot(model, test_batch, epoch));
            if (epoch == cfg.epochs) break;

            tape.backward(loss);
            adam.begin_step();
            for (std::size_t k = 0; k < model.parameters.size(); ++k) {
                const Matrix& g = fv.params[k].grad();
                if (g.size() == 0) continue;
                adam.update(k, model.parameters[k].value, g);
            }
        }
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFinite) throw;
        run.failed = true;
        run.failure = e.what();
    }
    run.model = std::move(model);
    return run;
}

namespace {

nlohmann::ordered_json opt(const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

void write_run_jsonl(std::ostream& os, const RunRecord& run, const nlohmann::ordered_json& tags) {
    for (const auto& e : run.epochs) {
        nlohmann::ordered_json line = tags;
        line["kind"] = "epoch";
        line["epoch"] = e.epoch;
        line["train_loss"] = e.train_loss;
        line["test_loss"] = e.test_loss;
        line["train_acc"] = e.train_acc;
        line["test_acc"] = e.test_acc;
        line["train_exact"] = e.train_exact;
        line["test_exact"] = e.test_exact;
        os << line.dump() << '\n';
    }
    for (const auto& s : run.snapshots) {
        nlohmann::ordered_json line = tags;
        line["kind"] = "snapshot";
        line["epoch"] = s.epoch;
        line["sigma"] = std::vector<double>(s.sigma.data(), s.sigma.data() + s.sigma.size());
        line["k_a"] = s.k_a;
        line["effrank"] = s.effrank;
        line["si"] = opt(s.si);
        line["wno_i"] = opt(s.wno_i);
        line["ai"] = opt(s.ai);
        line["r_tau"] = s.r_tau;
        line["r_eta"] = s.r_eta;
        line["dead_columns"] = s.dead_columns;
        os << line.dump() << '\n';
    }
    if (run.failed) {
        nlohmann::ordered_json line = tags;
        line["kind"] = "failure";
        line["reason"] = run.failure;
        os << line.dump() << '\n';
    }
}

}  // namespace gnnsup

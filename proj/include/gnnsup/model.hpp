#pragma once

// Message-passing models (GCN, GIN, GATv2) with the signed power-mean
// pooling family, evaluated on a tape so the same code path serves both
// inference and training.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "gnnsup/autodiff.hpp"
#include "gnnsup/graphgen.hpp"

namespace gnnsup {

enum class Arch { GCN, GIN, GATV2 };
enum class PoolKind { Mean, Max, PowerMean };
enum class PoolScope { Global, Local };
enum class Activation { Relu, LeakyRelu };

std::string to_string(Arch a);
std::string to_string(PoolKind k);
std::string to_string(PoolScope s);
std::string to_string(Activation a);
Arch arch_from_string(const std::string& s);
PoolKind pool_kind_from_string(const std::string& s);
PoolScope pool_scope_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);

struct PoolingSpec {
    PoolKind kind = PoolKind::Mean;
    /// Power-mean exponent, used when kind == PowerMean.
    double p = 1.0;
    /// Global: readout pool. Local: aggregator of the last message-passing
    /// layer, with the readout held at mean pooling.
    PoolScope scope = PoolScope::Global;
    double epsilon = 1e-6;
};

struct ModelConfig {
    Arch arch = Arch::GCN;
    int input_dim = 1;
    std::vector<int> layer_widths{16};
    PoolingSpec pooling;
    /// Applied to the pooled embedding before the linear readout.
    Activation final_activation = Activation::Relu;
    double leaky_slope = 0.01;
    int num_outputs = 1;
    /// GIN MLP hidden width; 0 means "same as the layer output width".
    int gin_hidden = 0;
    /// Activation inside the GIN MLP and between GIN layers.
    Activation gin_activation = Activation::Relu;

    void validate() const;
};

struct Parameter {
    std::string name;
    Matrix value;
};

struct Model {
    ModelConfig config;
    std::uint64_t seed = 0;
    std::vector<Parameter> parameters;

    const Matrix& param(const std::string& name) const;
    Matrix& param(const std::string& name);
};

/// Glorot-uniform weights, zero biases; deterministic in (config, seed).
Model init_model(const ModelConfig& config, std::uint64_t seed);

/// Disjoint union of graphs with precomputed aggregation operators.
struct GraphBatch {
    int num_graphs = 0;
    int num_nodes = 0;
    Matrix features;
    Matrix targets;
    /// D^-1/2 (A + I) D^-1/2
    std::shared_ptr<const ad::SparseMatrix> gcn_adj;
    /// A + I
    std::shared_ptr<const ad::SparseMatrix> sum_adj;
    /// Directed messages src -> dst over both edge directions plus self
    /// loops, sorted by (dst, src).
    std::shared_ptr<const ad::Index> msg_src;
    std::shared_ptr<const ad::Index> msg_dst;
    std::shared_ptr<const ad::Index> node_graph;
    /// First node of each graph in the union.
    std::vector<int> node_offset;
};

GraphBatch make_batch(const Dataset& data, const std::vector<int>& graph_indices);
GraphBatch make_batch(const Graph& g);

/// Tape handles for one forward evaluation.
struct ForwardVars {
    std::vector<ad::Var> params;  // aligned with Model::parameters
    std::vector<ad::Var> layers;  // H^(1..L)
    ad::Var pooled;               // pool(H^(L)), before the final activation
    ad::Var embedding;            // h_G, after the final activation
    ad::Var logits;
};

ForwardVars forward_on_tape(ad::Tape& tape, const Model& model, const GraphBatch& batch, bool track_grad);

struct ForwardTrace {
    std::vector<Matrix> layers;
    Matrix pooled;
    /// h_G per graph (rows), after the final activation.
    Matrix embedding;
    Matrix logits;
};

ForwardTrace forward(const Model& model, const GraphBatch& batch);
ForwardTrace forward(const Model& model, const Graph& g);

/// Signed power mean of each column of x (rows = nodes).
Vector power_mean_pool(const Matrix& x, double p, double epsilon);

/// Closed-form Jacobian of power_mean_pool: entry (i, d) = dh_d / dx_id,
///   (|s_d|/N + eps)^(1/p - 1) (|x_id| + eps)^(p - 1) / N.
/// With eps = 0 this is N^(-1/p) |s_d|^(1/p-1) |x_id|^(p-1).
Matrix power_mean_pool_gradient(const Matrix& x, double p, double epsilon);

struct PoolGradientReport {
    double vs_closed_form = 0.0;
    double vs_finite_difference = 0.0;
    double worst() const { return std::max(vs_closed_form, vs_finite_difference); }
};

/// Autodiff Jacobian of power_mean_pool versus the closed form and central
/// finite differences (h = 1e-6) on the given input.
PoolGradientReport pool_gradient_check(const Matrix& x, double p, double epsilon);

/// Binary checkpoint, little-endian:
///   "GNNSUPCK" | u32 version=1 | u64 seed | u32 len | config JSON bytes |
///   u32 count | count x (u32 name_len | name | u32 rows | u32 cols | f64[rows*cols] row-major)
void save_checkpoint(std::ostream& os, const Model& model);
Model load_checkpoint(std::istream& is);

}  // namespace gnnsup

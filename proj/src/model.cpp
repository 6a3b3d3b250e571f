#include "gnnsup/model.hpp"

#include <algorithm>
#include <cctype>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <tuple>

#include "gnnsup/json_io.hpp"
#include "gnnsup/rng.hpp"

namespace gnnsup {

namespace {

constexpr double kAttentionSlope = 0.2;

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const char* what) {
    auto lower = [](std::string v) {
        std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        return v;
    };
    for (const auto& [name, value] : table)
        if (lower(s) == lower(name)) return value;
    throw Error(ErrorCode::InvalidConfig, std::string("unknown ") + what + " '" + s + "'");
}

Matrix glorot(Rng& rng, int fan_in, int fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Matrix w(fan_in, fan_out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    return w;
}

ad::Var activate(ad::Var x, Activation act, double slope) {
    return act == Activation::Relu ? ad::relu(x) : ad::leaky_relu(x, slope);
}

ad::Var neighbor_pool(ad::Var messages, const GraphBatch& b, const PoolingSpec& spec) {
    switch (spec.kind) {
    case PoolKind::Mean: return ad::segment_mean(messages, b.msg_dst, b.num_nodes);
    case PoolKind::Max: return ad::segment_max(messages, b.msg_dst, b.num_nodes);
    case PoolKind::PowerMean:
        return ad::segment_power_mean(messages, b.msg_dst, b.num_nodes, spec.p, spec.epsilon);
    }
    throw Error(ErrorCode::InvalidConfig, "pool kind");
}

ad::Var graph_pool(ad::Var h, const GraphBatch& b, const PoolingSpec& spec) {
    if (spec.scope == PoolScope::Local) return ad::segment_mean(h, b.node_graph, b.num_graphs);
    switch (spec.kind) {
    case PoolKind::Mean: return ad::segment_mean(h, b.node_graph, b.num_graphs);
    case PoolKind::Max: return ad::segment_max(h, b.node_graph, b.num_graphs);
    case PoolKind::PowerMean:
        return ad::segment_power_mean(h, b.node_graph, b.num_graphs, spec.p, spec.epsilon);
    }
    throw Error(ErrorCode::InvalidConfig, "pool kind");
}

template <typename T>
void put(std::ostream& os, T v) {
    static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error(ErrorCode::Io, "truncated checkpoint");
    return v;
}

std::string get_string(std::istream& is) {
    const auto len = get<std::uint32_t>(is);
    std::string s(len, '\0');
    if (len > 0 && !is.read(s.data(), len)) throw Error(ErrorCode::Io, "truncated checkpoint");
    return s;
}

}  // namespace

std::string to_string(Arch a) {
    switch (a) {
    case Arch::GCN: return "GCN";
    case Arch::GIN: return "GIN";
    case Arch::GATV2: return "GATV2";
    }
    return "?";
}
std::string to_string(PoolKind k) {
    switch (k) {
    case PoolKind::Mean: return "mean";
    case PoolKind::Max: return "max";
    case PoolKind::PowerMean: return "power_mean";
    }
    return "?";
}
std::string to_string(PoolScope s) { return s == PoolScope::Global ? "global" : "local"; }
std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "leaky_relu"; }

Arch arch_from_string(const std::string& s) {
    return parse_enum<Arch>(s, {{"GCN", Arch::GCN}, {"GIN", Arch::GIN}, {"GATV2", Arch::GATV2}, {"GAT", Arch::GATV2}},
                            "architecture");
}
PoolKind pool_kind_from_string(const std::string& s) {
    return parse_enum<PoolKind>(
        s, {{"mean", PoolKind::Mean}, {"max", PoolKind::Max}, {"power_mean", PoolKind::PowerMean}}, "pool kind");
}
PoolScope pool_scope_from_string(const std::string& s) {
    return parse_enum<PoolScope>(s, {{"global", PoolScope::Global}, {"local", PoolScope::Local}}, "pool scope");
}
Activation activation_from_string(const std::string& s) {
    return parse_enum<Activation>(s, {{"relu", Activation::Relu}, {"leaky_relu", Activation::LeakyRelu}},
                                  "activation");
}

void ModelConfig::validate() const {
    if (input_dim < 1) throw Error(ErrorCode::InvalidConfig, "input_dim must be >= 1");
    if (layer_widths.empty()) throw Error(ErrorCode::InvalidConfig, "layer_widths must be non-empty");
    for (int w : layer_widths)
        if (w < 1) throw Error(ErrorCode::InvalidConfig, "layer widths must be >= 1");
    if (!(pooling.p >= 1.0)) throw Error(ErrorCode::InvalidConfig, "pooling p must be >= 1");
    if (!(pooling.epsilon > 0.0)) throw Error(ErrorCode::InvalidConfig, "pooling epsilon must be > 0");
    if (num_outputs < 1) throw Error(ErrorCode::InvalidConfig, "num_outputs must be >= 1");
    if (gin_hidden < 0) throw Error(ErrorCode::InvalidConfig, "gin_hidden must be >= 0");
}

const Matrix& Model::param(const std::string& name) const {
    for (const auto& p : parameters)
        if (p.name == name) return p.value;
    throw Error(ErrorCode::InvalidConfig, "no parameter named " + name);
}

Matrix& Model::param(const std::string& name) {
    return const_cast<Matrix&>(std::as_const(*this).param(name));
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    m.seed = seed;
    Rng rng(seed, 0);
    int in = config.input_dim;
    for (std::size_t l = 0; l < config.layer_widths.size(); ++l) {
        const int out = config.layer_widths[l];
        const std::string pre = "layer" + std::to_string(l) + ".";
        switch (config.arch) {
        case Arch::GCN:
            m.parameters.push_back({pre + "weight", glorot(rng, in, out)});
            m.parameters.push_back({pre + "bias", Matrix::Zero(1, out)});
            break;
        case Arch::GIN: {
            const int hidden = config.gin_hidden > 0 ? config.gin_hidden : out;
            m.parameters.push_back({pre + "mlp0.weight", glorot(rng, in, hidden)});
            m.parameters.push_back({pre + "mlp0.bias", Matrix::Zero(1, hidden)});
            m.parameters.push_back({pre + "mlp1.weight", glorot(rng, hidden, out)});
            m.parameters.push_back({pre + "mlp1.bias", Matrix::Zero(1, out)});
            break;
        }
        case Arch::GATV2:
            m.parameters.push_back({pre + "weight_src", glorot(rng, in, out)});
            m.parameters.push_back({pre + "weight_dst", glorot(rng, in, out)});
            m.parameters.push_back({pre + "att", glorot(rng, out, 1)});
            m.parameters.push_back({pre + "bias", Matrix::Zero(1, out)});
            break;
        }
        in = out;
    }
    m.parameters.push_back({"readout.weight", glorot(rng, in, config.num_outputs)});
    m.parameters.push_back({"readout.bias", Matrix::Zero(1, config.num_outputs)});
    return m;
}

GraphBatch make_batch(const Dataset& data, const std::vector<int>& graph_indices) {
    GraphBatch b;
    b.num_graphs = static_cast<int>(graph_indices.size());
    int feature_dim = data.feature_dim;
    int num_classes = data.num_classes;
    for (int gi : graph_indices) {
        const Graph& g = data.graphs.at(static_cast<std::size_t>(gi));
        b.node_offset.push_back(b.num_nodes);
        b.num_nodes += g.num_nodes;
        feature_dim = static_cast<int>(g.features.cols());
        num_classes = static_cast<int>(g.labels.size());
    }
    b.features.resize(b.num_nodes, feature_dim);
    b.targets.resize(b.num_graphs, num_classes);
    auto node_graph = std::make_shared<ad::Index>(static_cast<std::size_t>(b.num_nodes));
    std::vector<std::pair<int, int>> messages;  // (dst, src)
    std::vector<int> degree(static_cast<std::size_t>(b.num_nodes), 0);
    for (int k = 0; k < b.num_graphs; ++k) {
        const Graph& g = data.graphs[static_cast<std::size_t>(graph_indices[static_cast<std::size_t>(k)])];
        const int off = b.node_offset[static_cast<std::size_t>(k)];
        if (g.features.cols() != feature_dim) throw Error(ErrorCode::ShapeMismatch, "feature width differs");
        if (static_cast<int>(g.labels.size()) != num_classes) throw Error(ErrorCode::ShapeMismatch, "label width");
        b.features.middleRows(off, g.num_nodes) = g.features;
        for (int c = 0; c < num_classes; ++c) b.targets(k, c) = g.labels[static_cast<std::size_t>(c)];
        for (int i = 0; i < g.num_nodes; ++i) {
            (*node_graph)[static_cast<std::size_t>(off + i)] = k;
            messages.emplace_back(off + i, off + i);
        }
        for (auto [u, v] : g.edges) {
            messages.emplace_back(off + v, off + u);
            messages.emplace_back(off + u, off + v);
            ++degree[static_cast<std::size_t>(off + u)];
            ++degree[static_cast<std::size_t>(off + v)];
        }
    }
    std::sort(messages.begin(), messages.end());
    auto src = std::make_shared<ad::Index>();
    auto dst = std::make_shared<ad::Index>();
    std::vector<Eigen::Triplet<double>> norm_t, sum_t;
    for (auto [d, s] : messages) {
        src->push_back(s);
        dst->push_back(d);
        const double dd = degree[static_cast<std::size_t>(d)] + 1.0;
        const double ds = degree[static_cast<std::size_t>(s)] + 1.0;
        norm_t.emplace_back(d, s, 1.0 / std::sqrt(dd * ds));
        sum_t.emplace_back(d, s, 1.0);
    }
    auto gcn = std::make_shared<ad::SparseMatrix>(b.num_nodes, b.num_nodes);
    gcn->setFromTriplets(norm_t.begin(), norm_t.end());
    auto sum = std::make_shared<ad::SparseMatrix>(b.num_nodes, b.num_nodes);
    sum->setFromTriplets(sum_t.begin(), sum_t.end());
    b.gcn_adj = gcn;
    b.sum_adj = sum;
    b.msg_src = src;
    b.msg_dst = dst;
    b.node_graph = node_graph;
    return b;
}

GraphBatch make_batch(const Graph& g) {
    Dataset d;
    d.feature_dim = static_cast<int>(g.features.cols());
    d.num_classes = static_cast<int>(g.labels.size());
    d.graphs.push_back(g);
    d.split.push_back(Split::Test);
    return make_batch(d, {0});
}

ForwardVars forward_on_tape(ad::Tape& tape, const Model& model, const GraphBatch& b, bool track_grad) {
    const ModelConfig& cfg = model.config;
    if (b.features.cols() != cfg.input_dim)
        throw Error(ErrorCode::ShapeMismatch, "graph features do not match model input width");
    ForwardVars fv;
    for (const auto& p : model.parameters)
        fv.params.push_back(track_grad ? tape.parameter(p.value) : tape.constant(p.value));
    std::size_t next = 0;
    auto take = [&]() { return fv.params.at(next++); };

    ad::Var h = tape.constant(b.features);
    const std::size_t num_layers = cfg.layer_widths.size();
    for (std::size_t l = 0; l < num_layers; ++l) {
        const bool last = l + 1 == num_layers;
        const bool local = last && cfg.pooling.scope == PoolScope::Local;
        ad::Var out;
        switch (cfg.arch) {
        case Arch::GCN: {
            const ad::Var w = take(), bias = take();
            const ad::Var z = ad::matmul(h, w);
            const ad::Var agg = local ? neighbor_pool(ad::gather_rows(z, b.msg_src), b, cfg.pooling)
                                      : ad::sparse_matmul(b.gcn_adj, z);
            out = ad::add_bias(agg, bias);
            break;
        }
        case Arch::GIN: {
            const ad::Var w0 = take(), b0 = take(), w1 = take(), b1 = take();
            const ad::Var agg = local ? neighbor_pool(ad::gather_rows(h, b.msg_src), b, cfg.pooling)
                                      : ad::sparse_matmul(b.sum_adj, h);
            const ad::Var hidden = activate(ad::add_bias(ad::matmul(agg, w0), b0), cfg.gin_activation, cfg.leaky_slope);
            out = ad::add_bias(ad::matmul(hidden, w1), b1);
            break;
        }
        case Arch::GATV2: {
            const ad::Var ws = take(), wd = take(), att = take(), bias = take();
            const ad::Var xs = ad::matmul(h, ws);
            const ad::Var msg = ad::gather_rows(xs, b.msg_src);
            ad::Var agg;
            if (local) {
                agg = neighbor_pool(msg, b, cfg.pooling);
            } else {
                const ad::Var xd = ad::gather_rows(ad::matmul(h, wd), b.msg_dst);
                const ad::Var score = ad::matmul(ad::leaky_relu(ad::add(msg, xd), kAttentionSlope), att);
                const ad::Var alpha = ad::segment_softmax(score, b.msg_dst, b.num_nodes);
                agg = ad::scatter_add_rows(ad::mul_rows(msg, alpha), b.msg_dst, b.num_nodes);
            }
            out = ad::add_bias(agg, bias);
            break;
        }
        }
        if (!last) {
            const Activation inner = cfg.arch == Arch::GIN ? cfg.gin_activation : Activation::Relu;
            out = activate(out, inner, cfg.leaky_slope);
        }
        fv.layers.push_back(out);
        h = out;
    }
    fv.pooled = graph_pool(h, b, cfg.pooling);
    fv.embedding = activate(fv.pooled, cfg.final_activation, cfg.leaky_slope);
    const ad::Var wr = take(), br = take();
    fv.logits = ad::add_bias(ad::matmul(fv.embedding, wr), br);
    require_finite(fv.logits.value(), "forward logits");
    return fv;
}

ForwardTrace forward(const Model& model, const GraphBatch& batch) {
    ad::Tape tape;
    const ForwardVars fv = forward_on_tape(tape, model, batch, false);
    ForwardTrace t;
    for (const auto& v : fv.layers) t.layers.push_back(v.value());
    t.pooled = fv.pooled.value();
    t.embedding = fv.embedding.value();
    t.logits = fv.logits.value();
    return t;
}

ForwardTrace forward(const Model& model, const Graph& g) { return forward(model, make_batch(g)); }

Vector power_mean_pool(const Matrix& x, double p, double epsilon) {
    ad::Tape tape;
    auto seg = std::make_shared<const ad::Index>(static_cast<std::size_t>(x.rows()), 0);
    const ad::Var out = ad::segment_power_mean(tape.constant(x), seg, 1, p, epsilon);
    return out.value().row(0).transpose();
}

Matrix power_mean_pool_gradient(const Matrix& x, double p, double epsilon) {
    const double n = static_cast<double>(x.rows());
    Matrix grad(x.rows(), x.cols());
    for (Eigen::Index d = 0; d < x.cols(); ++d) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double v = x(i, d);
            s += (v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0)) * std::pow(std::abs(v) + epsilon, p);
        }
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            grad(i, d) = std::pow(std::abs(s) / n + epsilon, 1.0 / p - 1.0) *
                         std::pow(std::abs(x(i, d)) + epsilon, p - 1.0) / n;
    }
    return grad;
}

PoolGradientReport pool_gradient_check(const Matrix& x, double p, double epsilon) {
    const Eigen::Index n = x.rows(), dims = x.cols();
    // Autodiff Jacobian: column d of the pooled output only depends on column d of x.
    Matrix autodiff(n, dims);
    auto seg = std::make_shared<const ad::Index>(static_cast<std::size_t>(n), 0);
    for (Eigen::Index d = 0; d < dims; ++d) {
        ad::Tape tape;
        const ad::Var xv = tape.parameter(x);
        const ad::Var pooled = ad::segment_power_mean(xv, seg, 1, p, epsilon);
        Matrix select = Matrix::Zero(dims, 1);
        select(d, 0) = 1.0;
        const ad::Var picked = ad::matmul(pooled, tape.constant(select));
        tape.backward(picked);
        autodiff.col(d) = xv.grad().col(d);
    }
    const Matrix closed = power_mean_pool_gradient(x, p, epsilon);
    constexpr double h = 1e-6;
    Matrix fd(n, dims);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index d = 0; d < dims; ++d) {
            Matrix up = x, down = x;
            up(i, d) += h;
            down(i, d) -= h;
            fd(i, d) = (power_mean_pool(up, p, epsilon)(d) - power_mean_pool(down, p, epsilon)(d)) / (2.0 * h);
        }
    auto rel = [](const Matrix& a, const Matrix& b) {
        double worst = 0.0;
        for (Eigen::Index k = 0; k < a.size(); ++k) {
            const double scale = std::max({std::abs(a.data()[k]), std::abs(b.data()[k]), 1e-3});
            worst = std::max(worst, std::abs(a.data()[k] - b.data()[k]) / scale);
        }
        return worst;
    };
    return {rel(autodiff, closed), rel(autodiff, fd)};
}

void save_checkpoint(std::ostream& os, const Model& model) {
    os.write("GNNSUPCK", 8);
    put<std::uint32_t>(os, 1);
    put<std::uint64_t>(os, model.seed);
    const std::string cfg = nlohmann::json(model.config).dump();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(model.parameters.size()));
    for (const auto& p : model.parameters) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rows()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.cols()));
        os.write(reinterpret_cast<const char*>(p.value.data()),
                 static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.value.size())));
    }
    if (!os) throw Error(ErrorCode::Io, "checkpoint write failed");
}

Model load_checkpoint(std::istream& is) {
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, "GNNSUPCK", 8) != 0) throw Error(ErrorCode::Io, "bad checkpoint magic");
    if (get<std::uint32_t>(is) != 1) throw Error(ErrorCode::Io, "unsupported checkpoint version");
    Model m;
    m.seed = get<std::uint64_t>(is);
    m.config = nlohmann::json::parse(get_string(is)).get<ModelConfig>();
    const auto count = get<std::uint32_t>(is);
    for (std::uint32_t k = 0; k < count; ++k) {
        Parameter p;
        p.name = get_string(is);
        const auto rows = get<std::uint32_t>(is), cols = get<std::uint32_t>(is);
        p.value.resize(rows, cols);
        if (!is.read(reinterpret_cast<char*>(p.value.data()),
                     static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.value.size()))))
            throw Error(ErrorCode::Io, "truncated checkpoint");
        m.parameters.push_back(std::move(p));
    }
    return m;
}

}  // namespace gnnsup

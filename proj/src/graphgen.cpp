#include "gnnsup/graphgen.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>

#include "json.hpp"

#include "gnnsup/error.hpp"
#include "gnnsup/rng.hpp"

namespace gnnsup {

namespace {

// Stream ids at and above this value are reserved for dataset-level draws.
constexpr std::uint64_t kSplitStream = 1ULL << 62;

std::vector<Split> make_split(int n, double train_fraction, std::uint64_t seed) {
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(seed, kSplitStream);
    rng.shuffle(order);
    const int n_train = static_cast<int>(std::lround(train_fraction * n));
    std::vector<Split> split(static_cast<std::size_t>(n), Split::Test);
    for (int k = 0; k < n_train; ++k) split[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = Split::Train;
    return split;
}

bool extend_path(const std::vector<std::vector<int>>& adj, std::vector<int>& path, std::vector<char>& on_path,
                 int target_len, int min_vertex) {
    const int last = path.back();
    if (static_cast<int>(path.size()) == target_len) {
        for (int w : adj[static_cast<std::size_t>(last)])
            if (w == path.front()) return true;
        return false;
    }
    for (int w : adj[static_cast<std::size_t>(last)]) {
        if (w < min_vertex || on_path[static_cast<std::size_t>(w)]) continue;
        on_path[static_cast<std::size_t>(w)] = 1;
        path.push_back(w);
        const bool found = extend_path(adj, path, on_path, target_len, min_vertex);
        path.pop_back();
        on_path[static_cast<std::size_t>(w)] = 0;
        if (found) return true;
    }
    return false;
}

void check_cycle_length(int length) {
    if (length < 3 || length > 6) throw Error(ErrorCode::InvalidConfig, "cycle length must be in 3..6");
}

// Non-empty motif subsets containing neither {3,6} nor {4,5}.
const std::vector<std::vector<int>>& negative_motif_sets() {
    static const std::vector<std::vector<int>> sets = {{3}, {4}, {5}, {6}, {3, 4}, {3, 5}, {4, 6}, {5, 6}};
    return sets;
}

}  // namespace

std::string to_string(Family f) { return f == Family::Pairwise ? "pairwise" : "conjunction"; }

Family family_from_string(const std::string& s) {
    if (s == "pairwise") return Family::Pairwise;
    if (s == "conjunction") return Family::Conjunction;
    throw Error(ErrorCode::InvalidConfig, "unknown dataset family '" + s + "'");
}

std::vector<std::vector<int>> Graph::adjacency() const {
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(num_nodes));
    for (auto [u, v] : edges) {
        adj[static_cast<std::size_t>(u)].push_back(v);
        adj[static_cast<std::size_t>(v)].push_back(u);
    }
    for (auto& list : adj) std::sort(list.begin(), list.end());
    return adj;
}

std::vector<int> Graph::degrees() const {
    std::vector<int> deg(static_cast<std::size_t>(num_nodes), 0);
    for (auto [u, v] : edges) {
        ++deg[static_cast<std::size_t>(u)];
        ++deg[static_cast<std::size_t>(v)];
    }
    return deg;
}

std::vector<int> Dataset::indices(Split s) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < graphs.size(); ++i)
        if (split[i] == s) out.push_back(static_cast<int>(i));
    return out;
}

void PairwiseConfig::validate() const {
    if (num_types < 1) throw Error(ErrorCode::InvalidConfig, "num_types must be >= 1");
    if (chain_length < 2) throw Error(ErrorCode::InvalidConfig, "chain_length must be >= 2");
    if (!(activation_prob > 0.0 && activation_prob <= 1.0))
        throw Error(ErrorCode::InvalidConfig, "activation_prob must be in (0, 1]");
    if (num_graphs < 1) throw Error(ErrorCode::InvalidConfig, "num_graphs must be >= 1");
    if (!(train_fraction >= 0.0 && train_fraction <= 1.0))
        throw Error(ErrorCode::InvalidConfig, "train_fraction must be in [0, 1]");
}

void ConjunctionConfig::validate() const {
    if (!(p_extra >= 0.0 && p_extra < 1.0)) throw Error(ErrorCode::InvalidConfig, "p_extra must be in [0, 1)");
    if (num_graphs < 1) throw Error(ErrorCode::InvalidConfig, "num_graphs must be >= 1");
    if (!(train_fraction >= 0.0 && train_fraction <= 1.0))
        throw Error(ErrorCode::InvalidConfig, "train_fraction must be in [0, 1]");
    double total = 0.0;
    for (double m : label_mix) {
        if (m < 0.0) throw Error(ErrorCode::InvalidConfig, "label_mix entries must be >= 0");
        total += m;
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorCode::InvalidConfig, "label_mix must sum to 1");
}

std::vector<int> label_pairwise(const std::vector<int>& node_types, int num_types) {
    std::vector<int> y(static_cast<std::size_t>(num_types), 0);
    for (std::size_t i = 0; i + 1 < node_types.size(); ++i) {
        const int t = node_types[i];
        if (t >= 0 && t == node_types[i + 1]) {
            if (t >= num_types) throw Error(ErrorCode::InvalidConfig, "node type out of range");
            y[static_cast<std::size_t>(t)] = 1;
        }
    }
    return y;
}

Dataset gen_pairwise(const PairwiseConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Dataset data;
    data.family = Family::Pairwise;
    data.seed = seed;
    data.num_classes = cfg.num_types;
    data.feature_dim = cfg.num_types;
    data.graphs.reserve(static_cast<std::size_t>(cfg.num_graphs));
    for (int gi = 0; gi < cfg.num_graphs; ++gi) {
        Rng rng(seed, static_cast<std::uint64_t>(gi));
        Graph g;
        g.num_nodes = cfg.chain_length;
        for (int i = 0; i + 1 < cfg.chain_length; ++i) g.edges.emplace_back(i, i + 1);
        g.features = Matrix::Zero(cfg.chain_length, cfg.num_types);
        g.node_types.assign(static_cast<std::size_t>(cfg.chain_length), -1);
        for (int i = 0; i < cfg.chain_length; ++i) {
            if (!rng.bernoulli(cfg.activation_prob)) continue;
            const int t = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.num_types)));
            g.node_types[static_cast<std::size_t>(i)] = t;
            g.features(i, t) = 1.0;
        }
        g.labels = label_pairwise(g.node_types, cfg.num_types);
        data.graphs.push_back(std::move(g));
    }
    data.split = make_split(cfg.num_graphs, cfg.train_fraction, seed);
    return data;
}

bool has_cycle(const Graph& g, int length) {
    check_cycle_length(length);
    const auto adj = g.adjacency();
    std::vector<char> on_path(static_cast<std::size_t>(g.num_nodes), 0);
    // Anchor each candidate cycle at its smallest vertex.
    for (int s = 0; s < g.num_nodes; ++s) {
        std::vector<int> path{s};
        on_path[static_cast<std::size_t>(s)] = 1;
        const bool found = extend_path(adj, path, on_path, length, s);
        on_path[static_cast<std::size_t>(s)] = 0;
        if (found) return true;
    }
    return false;
}

bool node_in_cycle(const Graph& g, int node, int length) {
    check_cycle_length(length);
    if (node < 0 || node >= g.num_nodes) throw Error(ErrorCode::ShapeMismatch, "node id out of range");
    const auto adj = g.adjacency();
    std::vector<char> on_path(static_cast<std::size_t>(g.num_nodes), 0);
    std::vector<int> path{node};
    on_path[static_cast<std::size_t>(node)] = 1;
    return extend_path(adj, path, on_path, length, 0);
}

std::vector<int> label_conjunction(const Graph& g) {
    return {has_cycle(g, 3) && has_cycle(g, 6) ? 1 : 0, has_cycle(g, 4) && has_cycle(g, 5) ? 1 : 0};
}

Graph assemble_motifs(const std::vector<int>& motifs, std::uint64_t seed, std::uint64_t stream) {
    Rng rng(seed, stream);
    Graph g;
    std::vector<std::pair<int, int>> components;  // (first node, size)
    std::vector<int> order = motifs;
    rng.shuffle(order);
    for (int len : order) {
        if (len < 3 || len > 6) throw Error(ErrorCode::InvalidConfig, "motif length must be in 3..6");
        const int base = g.num_nodes;
        for (int i = 0; i < len; ++i) {
            const int u = base + i, v = base + (i + 1) % len;
            g.edges.emplace_back(std::min(u, v), std::max(u, v));
        }
        components.emplace_back(base, len);
        g.num_nodes += len;
    }
    // Random spanning tree over components: one bridge per tree edge.
    for (std::size_t c = 1; c < components.size(); ++c) {
        const auto parent = components[rng.uniform_int(c)];
        const auto child = components[c];
        const int u = parent.first + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(parent.second)));
        const int v = child.first + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(child.second)));
        g.edges.emplace_back(std::min(u, v), std::max(u, v));
    }
    std::sort(g.edges.begin(), g.edges.end());
    const auto deg = g.degrees();
    g.features.resize(g.num_nodes, 1);
    for (int i = 0; i < g.num_nodes; ++i) g.features(i, 0) = deg[static_cast<std::size_t>(i)];
    g.labels = label_conjunction(g);
    return g;
}

Dataset gen_conjunction(const ConjunctionConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Dataset data;
    data.family = Family::Conjunction;
    data.seed = seed;
    data.num_classes = 2;
    data.feature_dim = 1;
    data.graphs.reserve(static_cast<std::size_t>(cfg.num_graphs));
    constexpr int kMaxAttempts = 100;
    for (int gi = 0; gi < cfg.num_graphs; ++gi) {
        Rng rng(seed, static_cast<std::uint64_t>(gi));
        const double u = rng.uniform();
        std::vector<int> base;
        if (u < cfg.label_mix[0])
            base = {3, 6};
        else if (u < cfg.label_mix[0] + cfg.label_mix[1])
            base = {4, 5};
        else
            base = negative_motif_sets()[rng.uniform_int(negative_motif_sets().size())];
        std::vector<int> motifs = base;
        for (int len : base)
            if (rng.bernoulli(cfg.p_extra)) motifs.push_back(len);

        bool ok = false;
        for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
            const std::uint64_t stream = (static_cast<std::uint64_t>(gi) << 8) | static_cast<std::uint64_t>(attempt);
            Graph g = assemble_motifs(motifs, seed ^ 0xC0FFEEULL, stream);
            ok = true;
            for (int len : ConjunctionConfig::motif_lengths) {
                const bool intended = std::find(base.begin(), base.end(), len) != base.end();
                if (has_cycle(g, len) != intended) ok = false;
            }
            if (ok) data.graphs.push_back(std::move(g));
        }
        if (!ok) throw Error(ErrorCode::GenerationExhausted, "motif validation failed 100 times");
    }
    data.split = make_split(cfg.num_graphs, cfg.train_fraction, seed);
    return data;
}

void write_dataset_jsonl(std::ostream& os, const Dataset& data) {
    for (std::size_t i = 0; i < data.graphs.size(); ++i) {
        const Graph& g = data.graphs[i];
        nlohmann::ordered_json line;
        line["id"] = i;
        line["family"] = to_string(data.family);
        line["seed"] = data.seed;
        line["num_nodes"] = g.num_nodes;
        auto edges = nlohmann::ordered_json::array();
        for (auto [u, v] : g.edges) edges.push_back({u, v});
        line["edges"] = std::move(edges);
        nlohmann::ordered_json feats;
        feats["rows"] = g.features.rows();
        feats["cols"] = g.features.cols();
        feats["data"] = std::vector<double>(g.features.data(), g.features.data() + g.features.size());
        line["features"] = std::move(feats);
        line["labels"] = g.labels;
        if (data.family == Family::Pairwise) line["node_types"] = g.node_types;
        line["split"] = data.split[i] == Split::Train ? "train" : "test";
        os << line.dump() << '\n';
    }
}

Dataset read_dataset_jsonl(std::istream& is) {
    Dataset data;
    std::string text;
    bool first = true;
    while (std::getline(is, text)) {
        if (text.empty()) continue;
        nlohmann::json line;
        try {
            line = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::Io, std::string("bad dataset line: ") + e.what());
        }
        Graph g;
        g.num_nodes = line.at("num_nodes").get<int>();
        for (const auto& e : line.at("edges")) g.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
        const auto& f = line.at("features");
        const auto rows = f.at("rows").get<Eigen::Index>(), cols = f.at("cols").get<Eigen::Index>();
        const auto values = f.at("data").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(values.size()) != rows * cols)
            throw Error(ErrorCode::Io, "feature data length mismatch");
        g.features = Eigen::Map<const Matrix>(values.data(), rows, cols);
        g.labels = line.at("labels").get<std::vector<int>>();
        if (line.contains("node_types")) g.node_types = line.at("node_types").get<std::vector<int>>();
        if (first) {
            data.family = family_from_string(line.at("family").get<std::string>());
            data.seed = line.at("seed").get<std::uint64_t>();
            data.num_classes = static_cast<int>(g.labels.size());
            data.feature_dim = static_cast<int>(cols);
            first = false;
        }
        data.split.push_back(line.at("split").get<std::string>() == "train" ? Split::Train : Split::Test);
        data.graphs.push_back(std::move(g));
    }
    return data;
}

}  // namespace gnnsup

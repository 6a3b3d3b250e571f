#include "doctest.h"

#include <numeric>
#include <sstream>

#include "gnnsup/graphgen.hpp"
#include "support.hpp"

using namespace gnnsup;

namespace {

Graph make_graph(int n, std::vector<std::pair<int, int>> edges) {
    Graph g;
    g.num_nodes = n;
    for (auto& [u, v] : edges)
        if (u > v) std::swap(u, v);
    std::sort(edges.begin(), edges.end());
    g.edges = std::move(edges);
    g.features = Matrix::Zero(n, 1);
    return g;
}

Graph cycle_graph(int n) {
    std::vector<std::pair<int, int>> e;
    for (int i = 0; i < n; ++i) e.emplace_back(i, (i + 1) % n);
    return make_graph(n, e);
}

// P(class t positive) on a chain of length L where each node has type t with
// probability q, by a two-state recursion over "last node has type t".
double pairwise_rate(int length, double q) {
    double ends_t = q, ends_other = 1.0 - q;
    for (int i = 1; i < length; ++i) {
        const double t = ends_other * q;
        const double o = (ends_t + ends_other) * (1.0 - q);
        ends_t = t;
        ends_other = o;
    }
    return 1.0 - (ends_t + ends_other);
}

// Exhaustive: does some ordering of `subset` form a cycle in g?
bool subset_is_cycle(const std::vector<std::vector<bool>>& adj, std::vector<int> subset) {
    std::sort(subset.begin() + 1, subset.end());
    do {
        bool ok = true;
        for (std::size_t i = 0; i < subset.size() && ok; ++i)
            ok = adj[subset[i]][subset[(i + 1) % subset.size()]];
        if (ok) return true;
    } while (std::next_permutation(subset.begin() + 1, subset.end()));
    return false;
}

std::vector<std::vector<bool>> dense_adjacency(const Graph& g) {
    std::vector<std::vector<bool>> adj(g.num_nodes, std::vector<bool>(g.num_nodes, false));
    for (auto [u, v] : g.edges) adj[u][v] = adj[v][u] = true;
    return adj;
}

// Brute force over all vertex subsets of size len (optionally containing node).
bool brute_cycle(const Graph& g, int len, int node = -1) {
    const auto adj = dense_adjacency(g);
    const int n = g.num_nodes;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        if (__builtin_popcount(mask) != len) continue;
        if (node >= 0 && !(mask & (1u << node))) continue;
        std::vector<int> subset;
        for (int i = 0; i < n; ++i)
            if (mask & (1u << i)) subset.push_back(i);
        if (subset_is_cycle(adj, subset)) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("pairwise labels") {
    CHECK(label_pairwise({2, 2, 0, -1}, 4) == std::vector<int>{0, 0, 1, 0});
    CHECK(label_pairwise({1, 0, 1}, 2) == std::vector<int>{0, 0});
    CHECK(label_pairwise({3, 3, 3}, 4) == std::vector<int>{0, 0, 0, 1});
    CHECK(label_pairwise({-1, -1}, 2) == std::vector<int>{0, 0});
}

TEST_CASE("pairwise chain of two fully active nodes of one type") {
    PairwiseConfig cfg;
    cfg.num_types = 1;
    cfg.chain_length = 2;
    cfg.activation_prob = 1.0;
    cfg.num_graphs = 20;
    const Dataset d = gen_pairwise(cfg, 3);
    for (const auto& g : d.graphs) {
        CHECK(g.labels == std::vector<int>{1});
        CHECK(g.node_types == std::vector<int>{0, 0});
    }
}

TEST_CASE("pairwise graphs are paths with one-hot or zero rows") {
    PairwiseConfig cfg;
    cfg.num_types = 5;
    cfg.chain_length = 9;
    cfg.num_graphs = 50;
    const Dataset d = gen_pairwise(cfg, 11);
    REQUIRE(d.graphs.size() == 50);
    for (const auto& g : d.graphs) {
        CHECK(g.num_nodes == 9);
        REQUIRE(g.edges.size() == 8);
        for (int i = 0; i < 8; ++i) CHECK(g.edges[i] == std::pair<int, int>{i, i + 1});
        for (int i = 0; i < 9; ++i) {
            const double s = g.features.row(i).sum();
            CHECK((g.features.row(i).array() >= 0.0).all());
            CHECK(g.features.row(i).maxCoeff() <= 1.0);
            if (g.node_types[i] < 0)
                CHECK(s == 0.0);
            else
                CHECK((s == 1.0 && g.features(i, g.node_types[i]) == 1.0));
        }
        CHECK(g.labels == label_pairwise(g.node_types, 5));
    }
}

TEST_CASE("pairwise recursion agrees with enumeration of short chains") {
    // k = 2 types plus "none", p = 0.5: each node is none w.p. 1/2, else type 0 or 1.
    const int length = 5;
    const std::array<double, 3> prob{0.5, 0.25, 0.25};  // none, 0, 1
    double positive0 = 0.0;
    std::vector<int> seq(length, 0);
    for (int code = 0; code < 243; ++code) {
        int c = code;
        double p = 1.0;
        std::vector<int> types(length);
        for (int i = 0; i < length; ++i) {
            const int s = c % 3;
            c /= 3;
            p *= prob[s];
            types[i] = s - 1;
        }
        if (label_pairwise(types, 2)[0] == 1) positive0 += p;
    }
    CHECK(pairwise_rate(length, 0.25) == doctest::Approx(positive0).epsilon(1e-14));
}

TEST_CASE("pairwise class rates match the closed form within 3 sigma") {
    PairwiseConfig cfg;
    cfg.num_types = 16;
    cfg.activation_prob = 0.5;
    cfg.num_graphs = 2000;
    const Dataset d = gen_pairwise(cfg, 2024);
    const double rate = pairwise_rate(cfg.chain_length, cfg.activation_prob / cfg.num_types);
    const double sigma = std::sqrt(rate * (1.0 - rate) / cfg.num_graphs);
    double pooled = 0.0;
    for (int t = 0; t < cfg.num_types; ++t) {
        int count = 0;
        for (const auto& g : d.graphs) count += g.labels[t];
        const double empirical = static_cast<double>(count) / cfg.num_graphs;
        CAPTURE(t);
        // Exchangeability across classes.
        CHECK(std::abs(empirical - rate) <= 4.0 * sigma);
        pooled += empirical;
    }
    pooled /= cfg.num_types;
    CHECK(std::abs(pooled - rate) <= 3.0 * sigma / std::sqrt(16.0) + 1e-12);
}

TEST_CASE("datasets are deterministic and splits respect the fraction") {
    PairwiseConfig cfg;
    cfg.num_graphs = 101;
    cfg.train_fraction = 0.7;
    const Dataset a = gen_pairwise(cfg, 5);
    const Dataset b = gen_pairwise(cfg, 5);
    std::ostringstream sa, sb;
    write_dataset_jsonl(sa, a);
    write_dataset_jsonl(sb, b);
    CHECK(sa.str() == sb.str());
    const auto train = a.indices(Split::Train).size();
    CHECK(std::abs(static_cast<double>(train) - 0.7 * 101) <= 1.0);
    const Dataset c = gen_pairwise(cfg, 6);
    std::ostringstream sc;
    write_dataset_jsonl(sc, c);
    CHECK(sa.str() != sc.str());
}

TEST_CASE("dataset JSON lines round-trip bit-exactly") {
    ConjunctionConfig cc;
    cc.num_graphs = 30;
    cc.p_extra = 0.3;
    PairwiseConfig pc;
    pc.num_graphs = 30;
    for (const Dataset& d : {gen_conjunction(cc, 9), gen_pairwise(pc, 9)}) {
        std::stringstream ss;
        write_dataset_jsonl(ss, d);
        const std::string first = ss.str();
        const Dataset back = read_dataset_jsonl(ss);
        REQUIRE(back.graphs.size() == d.graphs.size());
        for (std::size_t i = 0; i < d.graphs.size(); ++i) {
            CHECK(back.graphs[i].features == d.graphs[i].features);
            CHECK(back.graphs[i].edges == d.graphs[i].edges);
            CHECK(back.graphs[i].labels == d.graphs[i].labels);
            CHECK(back.split[i] == d.split[i]);
        }
        std::ostringstream again;
        write_dataset_jsonl(again, back);
        CHECK(again.str() == first);
    }
}

TEST_CASE("cycle oracles on small graphs") {
    const Graph tri = cycle_graph(3);
    CHECK(has_cycle(tri, 3));
    CHECK(node_in_cycle(tri, 0, 3));
    const Graph hex = cycle_graph(6);
    CHECK_FALSE(has_cycle(hex, 3));
    CHECK(has_cycle(hex, 6));
    // Triangle 0-1-2 bridged to square 3-4-5-6 by the edge 2-3.
    const Graph g = make_graph(7, {{0, 1}, {1, 2}, {0, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 6}, {3, 6}});
    CHECK_FALSE(node_in_cycle(g, 2, 5));
    CHECK_FALSE(node_in_cycle(g, 3, 5));
    CHECK(node_in_cycle(g, 3, 4));
    CHECK_FALSE(node_in_cycle(g, 3, 3));
    CHECK_FALSE(has_cycle(g, 5));
}

TEST_CASE("cycle oracles match subset brute force on random graphs") {
    Rng rng(77, 0);
    for (int trial = 0; trial < 60; ++trial) {
        const int n = 4 + static_cast<int>(rng.uniform_int(9));
        const Graph g = testing::random_graph(rng, n, 1, 0, 0.15 + 0.1 * rng.uniform());
        for (int len = 3; len <= 6; ++len) {
            CAPTURE(trial);
            CAPTURE(len);
            CHECK(has_cycle(g, len) == brute_cycle(g, len));
            const int node = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
            CHECK(node_in_cycle(g, node, len) == brute_cycle(g, len, node));
        }
    }
}

TEST_CASE("conjunction graphs carry degree features and consistent labels") {
    ConjunctionConfig cfg;
    cfg.num_graphs = 300;
    cfg.p_extra = 0.4;
    const Dataset d = gen_conjunction(cfg, 17);
    REQUIRE(d.graphs.size() == 300);
    int positives_a = 0, positives_b = 0;
    for (const auto& g : d.graphs) {
        REQUIRE(g.features.cols() == 1);
        const auto deg = g.degrees();
        for (int i = 0; i < g.num_nodes; ++i) CHECK(g.features(i, 0) == deg[i]);
        const std::vector<int> expected{has_cycle(g, 3) && has_cycle(g, 6) ? 1 : 0,
                                        has_cycle(g, 4) && has_cycle(g, 5) ? 1 : 0};
        CHECK(g.labels == expected);
        CHECK(label_conjunction(g) == expected);
        for (std::size_t e = 0; e < g.edges.size(); ++e) {
            CHECK(g.edges[e].first < g.edges[e].second);
            if (e > 0) CHECK(g.edges[e - 1] < g.edges[e]);
        }
        positives_a += expected[0];
        positives_b += expected[1];
    }
    CHECK(positives_a > 40);
    CHECK(positives_b > 40);
}

TEST_CASE("conjunction positives with no extras contain exactly their pair") {
    ConjunctionConfig cfg;
    cfg.num_graphs = 100;
    cfg.p_extra = 0.0;
    cfg.label_mix = {1.0, 0.0, 0.0};
    for (const auto& g : gen_conjunction(cfg, 4).graphs) {
        CHECK(has_cycle(g, 3));
        CHECK(has_cycle(g, 6));
        CHECK_FALSE(has_cycle(g, 4));
        CHECK_FALSE(has_cycle(g, 5));
    }
}

TEST_CASE("config validation") {
    PairwiseConfig p;
    p.activation_prob = 0.0;
    CHECK_THROWS_AS(p.validate(), Error);
    p.activation_prob = 0.5;
    p.chain_length = 1;
    CHECK_THROWS_AS(p.validate(), Error);
    ConjunctionConfig c;
    c.label_mix = {0.5, 0.5, 0.5};
    CHECK_THROWS_AS(c.validate(), Error);
    c.label_mix = {0.25, 0.25, 0.5};
    c.p_extra = 1.0;
    CHECK_THROWS_AS(c.validate(), Error);
}

#pragma once

// PAIRWISE and CONJUNCTION synthetic datasets, plus the exact short-cycle
// oracles used to label them.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gnnsup/numerics.hpp"

namespace gnnsup {

enum class Family { Pairwise, Conjunction };
enum class Split { Train, Test };

std::string to_string(Family f);
Family family_from_string(const std::string& s);

/// Undirected simple graph with node features and a multi-hot graph label.
struct Graph {
    int num_nodes = 0;
    /// Stored with first < second, no duplicates, no self-loops.
    std::vector<std::pair<int, int>> edges;
    Matrix features;
    std::vector<int> labels;
    /// PAIRWISE only: type id per node, -1 for a typeless (all-zero) node.
    std::vector<int> node_types;

    std::vector<std::vector<int>> adjacency() const;
    std::vector<int> degrees() const;
};

struct PairwiseConfig {
    int num_types = 16;
    int chain_length = 12;
    double activation_prob = 0.5;
    int num_graphs = 2000;
    double train_fraction = 0.8;

    void validate() const;
};

struct ConjunctionConfig {
    static constexpr std::array<int, 4> motif_lengths{3, 4, 5, 6};
    double p_extra = 0.0;
    int num_graphs = 2000;
    double train_fraction = 0.8;
    /// Proportions of (A-positive, B-positive, negative) graphs.
    std::array<double, 3> label_mix{0.25, 0.25, 0.5};

    void validate() const;
};

struct Dataset {
    Family family = Family::Pairwise;
    std::uint64_t seed = 0;
    int num_classes = 0;
    int feature_dim = 0;
    std::vector<Graph> graphs;
    std::vector<Split> split;

    std::vector<int> indices(Split s) const;
};

/// Multi-hot label: entry t is 1 iff two adjacent chain nodes both have type t.
std::vector<int> label_pairwise(const std::vector<int>& node_types, int num_types);

Dataset gen_pairwise(const PairwiseConfig& cfg, std::uint64_t seed);

/// True iff g has a simple cycle on exactly `length` distinct vertices (3..6).
bool has_cycle(const Graph& g, int length);
/// True iff `node` lies on a simple cycle of exactly `length` vertices (3..6).
bool node_in_cycle(const Graph& g, int node, int length);

/// (y_A, y_B) = (C3 and C6, C4 and C5).
std::vector<int> label_conjunction(const Graph& g);

/// One CONJUNCTION graph built from the given motif multiset (cycle lengths),
/// bridged by a random spanning tree over motif components.
Graph assemble_motifs(const std::vector<int>& motifs, std::uint64_t seed, std::uint64_t stream);

Dataset gen_conjunction(const ConjunctionConfig& cfg, std::uint64_t seed);

/// JSON-lines, one graph per line:
///   {"id", "family", "seed", "num_nodes", "edges": [[u,v],...],
///    "features": {"rows", "cols", "data"}, "labels", "node_types"?, "split"}
void write_dataset_jsonl(std::ostream& os, const Dataset& data);
Dataset read_dataset_jsonl(std::istream& is);

}  // namespace gnnsup

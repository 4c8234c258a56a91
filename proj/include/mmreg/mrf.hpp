#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mmreg/volume.hpp"

namespace mmreg {

using Labeling = std::vector<int>;

/// Labels laid out on a regular per-axis lattice (the dense k^3 catalogue),
/// which lets L1 min-convolutions run as separable distance transforms.
struct LabelLattice {
    int k[3] = {1, 1, 1};
    double step[3] = {0.0, 0.0, 0.0};
    std::vector<int> cell;  // label -> lattice cell, x-fastest
};

/// Detects a full regular lattice in the catalogue; nullopt otherwise.
std::optional<LabelLattice> detect_lattice(const LabelSpace& labels);

/// Pairwise MRF on the control-grid graph:
///   E(labels) = sum_i unary(i, l_i) + sum_(i,j) w_ij * table(l_i, l_j)
struct MrfInstance {
    std::size_t num_nodes = 0;
    std::size_t num_labels = 0;
    std::vector<double> unaries;         // node-major, num_nodes x num_labels
    std::vector<Edge> edges;
    std::vector<double> edge_weights;    // one w_p per edge
    std::vector<double> pairwise_table;  // num_labels x num_labels
    std::optional<LabelLattice> lattice;  // set when pairwise_table is L1 on it

    double unary(std::size_t node, std::size_t label) const { return unaries[node * num_labels + label]; }
    double& unary(std::size_t node, std::size_t label) { return unaries[node * num_labels + label]; }
    double table(std::size_t a, std::size_t b) const { return pairwise_table[a * num_labels + b]; }

    /// Throws Structural on inconsistent sizes or out-of-range edges.
    void validate() const;
    double energy(std::span<const int> labels) const;
};

/// f(a, b) = ||d_a - d_b||_1 in mm.
std::vector<double> l1_pairwise_table(const LabelSpace& labels);

/// Instance with the given unaries and one pairwise weight on every edge.
MrfInstance make_instance(std::vector<double> unaries, const ControlGrid& grid, const LabelSpace& labels,
                          double pairwise_weight);

struct SolverOptions {
    int max_cycles = 20;
    int message_iterations = 30;
};

/// Approximate minimiser. Sequential tree-reweighted message passing gives a
/// first labeling; alpha-expansion (each move solved exactly by min-cut,
/// valid because the pairwise term is a metric) then runs from it and from
/// the all-zero labeling, each followed by single-node descent, and the
/// lower-energy result is kept. The result never has higher energy than the
/// all-zero labeling and no single-node change lowers it.
Labeling solve(const MrfInstance& instance, const SolverOptions& options = {});

/// Exact minimiser by enumeration (|L|^|V| <= 1e7); ties go to the
/// lexicographically smallest labeling.
Labeling solve_bruteforce(const MrfInstance& instance);

/// The message-passing stage of solve() on its own.
Labeling solve_messages(const MrfInstance& instance, int iterations);

/// Min s-t cut on a small directed graph; used by the expansion moves.
class MaxFlow {
public:
    explicit MaxFlow(std::size_t nodes);

    /// Adds cost `source_cap` when the node ends on the sink side and
    /// `sink_cap` when it ends on the source side.
    void add_terminal(std::size_t node, double source_cap, double sink_cap);
    void add_edge(std::size_t from, std::size_t to, double cap);

    double solve();
    /// After solve(): true when the node is reachable from the source.
    bool source_side(std::size_t node) const { return reachable_[node]; }

private:
    struct Arc {
        std::size_t to;
        std::size_t rev;
        double cap;
    };
    bool bfs();
    double dfs(std::size_t v, double pushed);

    std::size_t n_;
    std::size_t source_, sink_;
    std::vector<std::vector<Arc>> adj_;
    std::vector<int> level_;
    std::vector<std::size_t> it_;
    std::vector<char> reachable_;
};

}  // namespace mmreg

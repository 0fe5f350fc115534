#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "ivgd/linalg.hpp"

namespace ivgd {

using NodeId = std::uint32_t;

struct Edge {
    NodeId src;
    NodeId dst;
    auto operator<=>(const Edge&) const = default;
};

/// How influence probabilities are attached to edges.
struct ConstantProb {
    double p;
};
struct WeightedCascade {};  ///< p(u, v) = 1 / in-degree(v)
using ProbRule = std::variant<ConstantProb, WeightedCascade>;

std::string to_string(const ProbRule& rule);
/// Parses "weighted_cascade" or "constant:<p>".
ProbRule parse_prob_rule(std::string_view text);

/// Immutable directed graph with per-edge influence probabilities.
///
/// Edges are kept sorted by (src, dst). Both adjacency directions index into
/// the same edge array, so `edge(e)` / `prob(e)` work for ids returned by
/// either `out_edges` or `in_edges`.
class Graph {
public:
    Graph() = default;

    /// Validates and builds the adjacency. Duplicate directed edges are merged
    /// (first probability wins); self-loops and out-of-range ids are rejected.
    static Graph from_edges(std::size_t n, std::vector<Edge> edges, std::vector<double> probs);
    static Graph from_edges(std::size_t n, std::vector<Edge> edges, const ProbRule& rule);

    std::size_t num_nodes() const noexcept { return n_; }
    std::size_t num_edges() const noexcept { return edges_.size(); }

    const Edge& edge(std::size_t e) const { return edges_[e]; }
    double prob(std::size_t e) const { return probs_[e]; }
    std::span<const Edge> edges() const noexcept { return edges_; }
    std::span<const double> probs() const noexcept { return probs_; }
    double max_prob() const noexcept { return max_prob_; }

    std::span<const std::size_t> out_edges(NodeId v) const {
        return {out_ids_.data() + out_off_[v], out_off_[v + 1] - out_off_[v]};
    }
    std::span<const std::size_t> in_edges(NodeId v) const {
        return {in_ids_.data() + in_off_[v], in_off_[v + 1] - in_off_[v]};
    }
    std::size_t in_degree(NodeId v) const { return in_off_[v + 1] - in_off_[v]; }
    std::size_t out_degree(NodeId v) const { return out_off_[v + 1] - out_off_[v]; }

    /// Undirected neighbour lists (union of in- and out-neighbours), sorted.
    std::vector<std::vector<NodeId>> undirected_neighbors() const;

    /// Checks every structural invariant; throws ValidationError on failure.
    void validate() const;

    /// Hop diameter of the underlying undirected graph (largest finite BFS
    /// distance); 0 for graphs without edges.
    std::size_t undirected_diameter() const;

private:
    std::size_t n_ = 0;
    std::vector<Edge> edges_;
    std::vector<double> probs_;
    std::vector<std::size_t> out_off_{0};
    std::vector<std::size_t> out_ids_;
    std::vector<std::size_t> in_off_{0};
    std::vector<std::size_t> in_ids_;
    double max_prob_ = 0.0;
};

/// Parses "u v" lines ("#" starts a comment). Undirected input is expanded to
/// both directions; n = 1 + the largest index seen.
Graph load_edge_list(std::string_view text, bool directed, const ProbRule& rule);
Graph load_edge_list_file(const std::string& path, bool directed, const ProbRule& rule);

/// "n m" followed by sorted "u v p" lines, p at 17 significant digits.
std::string dump_graph(const Graph& g);
/// Inverse of dump_graph.
Graph parse_graph_dump(std::string_view text);

struct PathGraph { std::size_t n; };
struct StarGraph { std::size_t n; };
struct CycleGraph { std::size_t n; };
struct ErdosRenyi {
    std::size_t n;
    double p_edge;
    std::uint64_t seed;
};
using GraphKind = std::variant<PathGraph, StarGraph, CycleGraph, ErdosRenyi>;

/// Undirected textbook generators, stored as symmetric directed edges.
Graph generate_graph(const GraphKind& kind, const ProbRule& rule);

/// Parses "path:N", "star:N", "cycle:N" or "er:N:P:SEED".
GraphKind parse_graph_kind(std::string_view spec);

/// Matrix-free linear operator R^cols -> R^rows.
struct LinearOperator {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::function<Vector(std::span<const double>)> apply;
    std::function<Vector(std::span<const double>)> apply_transpose;
};

/// Wraps a dense matrix; `m` must outlive the returned operator.
LinearOperator dense_operator(const Matrix& m);

/// Largest singular value by power iteration on A^T A. Stops once the relative
/// change of the estimate is below `tol` or after `iters` iterations.
double power_iteration_norm(const LinearOperator& op, std::size_t iters = 1000, double tol = 1e-12,
                            std::uint64_t seed = 0);

/// Linear equality constraint a^T x = b.
struct ConstraintSpec {
    Vector a;
    double b = 0.0;

    /// a = all ones, b = source count.
    static ConstraintSpec source_count(std::size_t n, double count);
    double residual(std::span<const double> x) const { return dot(a, x) - b; }
};

/// Spectral radius of A^T A for the single-row constraint, i.e. |a|^2.
double spectral_radius_ata(const ConstraintSpec& c);

}  // namespace ivgd

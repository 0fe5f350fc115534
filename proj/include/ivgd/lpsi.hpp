#pragma once

#include <cstddef>
#include <span>

#include "ivgd/graph.hpp"
#include "ivgd/linalg.hpp"

namespace ivgd {

struct LpsiConfig {
    double alpha = 0.01;
    double tol = 1e-12;
    std::size_t max_iters = 100000;
};

/// Label-propagation scores on the undirected view of `g`:
///   e <- alpha * S e + (1 - alpha) * y,  S = D^{-1/2} A D^{-1/2},
/// with y recoded to +1 (diffused) / -1 (not diffused). Isolated nodes have a
/// zero row in S and keep (1 - alpha) * y.
Vector lpsi_scores(const Graph& g, std::span<const double> diffusion, const LpsiConfig& cfg = {});

/// Node i is a source iff score_i > 0 and score_i >= every neighbour's
/// score. Tied peaks are all reported.
Vector lpsi_sources(std::span<const double> scores, const Graph& g);

}  // namespace ivgd

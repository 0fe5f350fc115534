#include "ivgd/lpsi.hpp"

#include <cmath>

#include "ivgd/errors.hpp"

namespace ivgd {

Vector lpsi_scores(const Graph& g, std::span<const double> diffusion, const LpsiConfig& cfg) {
    const auto n = g.num_nodes();
    if (diffusion.size() != n) throw ValidationError("diffusion vector length does not match graph");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ValidationError("LPSI alpha must be in (0,1)");
    const auto nb = g.undirected_neighbors();
    Vector inv_sqrt_deg(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        if (!nb[i].empty()) inv_sqrt_deg[i] = 1.0 / std::sqrt(static_cast<double>(nb[i].size()));

    Vector base(n);
    for (std::size_t i = 0; i < n; ++i) base[i] = (1.0 - cfg.alpha) * (2.0 * diffusion[i] - 1.0);
    Vector e(n);
    for (std::size_t i = 0; i < n; ++i) e[i] = 2.0 * diffusion[i] - 1.0;
    Vector next(n);
    for (std::size_t it = 0; it < cfg.max_iters; ++it) {
        double change = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (auto j : nb[i]) s += inv_sqrt_deg[j] * e[j];
            next[i] = cfg.alpha * inv_sqrt_deg[i] * s + base[i];
            change = std::max(change, std::abs(next[i] - e[i]));
        }
        e.swap(next);
        if (change <= cfg.tol) return e;
    }
    throw NumericError("LPSI propagation did not converge within max_iters");
}

Vector lpsi_sources(std::span<const double> scores, const Graph& g) {
    if (scores.size() != g.num_nodes()) throw ValidationError("score vector length does not match graph");
    const auto nb = g.undirected_neighbors();
    Vector labels(scores.size(), 0.0);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!(scores[i] > 0.0)) continue;
        bool peak = true;
        for (auto j : nb[i])
            if (scores[j] > scores[i]) {
                peak = false;
                break;
            }
        labels[i] = peak ? 1.0 : 0.0;
    }
    return labels;
}

}  // namespace ivgd

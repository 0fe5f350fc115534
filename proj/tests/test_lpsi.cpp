#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ivgd/lpsi.hpp"
#include "ivgd/rng.hpp"

using namespace ivgd;

namespace {

// Solves (I - alpha S) e = (1 - alpha) y by Gaussian elimination with partial pivoting.
Vector direct_solve(const Graph& g, const Vector& diffusion, double alpha) {
    const std::size_t n = g.num_nodes();
    const auto nb = g.undirected_neighbors();
    Matrix a(n, n);
    Vector rhs(n);
    for (std::size_t i = 0; i < n; ++i) {
        a(i, i) = 1.0;
        rhs[i] = (1 - alpha) * (diffusion[i] > 0.5 ? 1.0 : -1.0);
        for (auto j : nb[i]) a(i, j) -= alpha / std::sqrt(double(nb[i].size()) * double(nb[j].size()));
    }
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
        for (std::size_t k = 0; k < n; ++k) std::swap(a(c, k), a(piv, k));
        std::swap(rhs[c], rhs[piv]);
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a(r, c) / a(c, c);
            for (std::size_t k = c; k < n; ++k) a(r, k) -= f * a(c, k);
            rhs[r] -= f * rhs[c];
        }
    }
    Vector e(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = rhs[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= a(i, k) * e[k];
        e[i] = s / a(i, i);
    }
    return e;
}

}  // namespace

TEST_CASE("propagation off") {
    const auto g = generate_graph(CycleGraph{5}, WeightedCascade{});
    const Vector y{1, 0, 1, 1, 0};
    const auto s = lpsi_scores(g, y, {1e-12, 1e-14, 1000});
    for (std::size_t i = 0; i < 5; ++i) CHECK(s[i] == doctest::Approx(y[i] > 0.5 ? 1.0 : -1.0));
}

TEST_CASE("isolated node keeps its own label") {
    const auto g = generate_graph(ErdosRenyi{3, 0.0, 1}, WeightedCascade{});
    const auto s = lpsi_scores(g, Vector{1, 0, 0});
    CHECK(s[0] == doctest::Approx(0.99));
    CHECK(s[1] == doctest::Approx(-0.99));
    CHECK(lpsi_sources(s, g) == Vector{1, 0, 0});
}

TEST_CASE("3-node path against the direct solve") {
    const auto g = generate_graph(PathGraph{3}, WeightedCascade{});
    const Vector y{1, 1, 0};
    const auto s = lpsi_scores(g, y, {0.5, 1e-14, 100000});
    const auto oracle = direct_solve(g, y, 0.5);
    for (std::size_t i = 0; i < 3; ++i) CHECK(s[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
    // Scores fall along the path and only node 0 is a positive peak.
    CHECK(s[0] > s[1]);
    CHECK(s[1] > s[2]);
    CHECK(lpsi_sources(s, g) == Vector{1, 0, 0});
}

TEST_CASE("iterative scores equal the dense solve on random graphs") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto g = generate_graph(ErdosRenyi{50, 0.08, seed}, WeightedCascade{});
        Rng rng(seed);
        Vector y(50);
        for (auto& v : y) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
        for (double alpha : {0.01, 0.49, 0.9}) {
            const LpsiConfig cfg{alpha, 1e-12, 100000};
            const auto s = lpsi_scores(g, y, cfg);
            const auto oracle = direct_solve(g, y, alpha);
            for (std::size_t i = 0; i < 50; ++i) CHECK(std::abs(s[i] - oracle[i]) <= 10 * cfg.tol / (1 - alpha));
        }
    }
}

TEST_CASE("source rule") {
    const auto g = generate_graph(PathGraph{4}, WeightedCascade{});
    CHECK(lpsi_sources(Vector{-1, -0.5, -0.2, -0.9}, g) == Vector{0, 0, 0, 0});
    CHECK(lpsi_sources(Vector{0.3, 0.3, -0.2, 0.1}, g) == Vector{1, 1, 0, 1});
    const Vector s{0.2, 0.7, 0.1, 0.4};
    Vector scaled = s;
    for (auto& v : scaled) v *= 37.0;
    CHECK(lpsi_sources(s, g) == lpsi_sources(scaled, g));
}

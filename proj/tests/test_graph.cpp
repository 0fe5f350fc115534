#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ivgd/errors.hpp"
#include "ivgd/graph.hpp"
#include "ivgd/rng.hpp"

using namespace ivgd;

namespace {

// Largest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.
double jacobi_max_eigenvalue(Matrix a) {
    const std::size_t n = a.rows;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    double best = a(0, 0);
    for (std::size_t i = 1; i < n; ++i) best = std::max(best, a(i, i));
    return best;
}

std::vector<Edge> sorted_edges(const Graph& g) { return {g.edges().begin(), g.edges().end()}; }

}  // namespace

TEST_CASE("load_edge_list expands undirected input") {
    const auto g = load_edge_list("0 1\n1 2", false, ConstantProb{0.1});
    CHECK(g.num_nodes() == 3);
    CHECK(g.num_edges() == 4);
    for (double p : g.probs()) CHECK(p == 0.1);
    g.validate();
}

TEST_CASE("karate edge list has 34 nodes and 156 directed edges") {
    const auto g = load_edge_list_file(IVGD_DATA_DIR "/karate.edgelist", false, WeightedCascade{});
    CHECK(g.num_nodes() == 34);
    CHECK(g.num_edges() == 156);
    CHECK(g.undirected_diameter() == 5);
}

TEST_CASE("weighted cascade gives 1/in-degree") {
    const auto g = load_edge_list("0 1\n2 1", true, WeightedCascade{});
    REQUIRE(g.num_edges() == 2);
    for (double p : g.probs()) CHECK(p == 0.5);

    const auto k = load_edge_list_file(IVGD_DATA_DIR "/karate.edgelist", false, WeightedCascade{});
    for (NodeId v = 0; v < k.num_nodes(); ++v) {
        double sum = 0.0;
        for (auto e : k.in_edges(v)) {
            CHECK(k.prob(e) == doctest::Approx(1.0 / k.in_degree(v)));
            sum += k.prob(e);
        }
        CHECK(sum == doctest::Approx(1.0));
    }
}

TEST_CASE("edge list errors") {
    SUBCASE("malformed line reports its number") {
        try {
            load_edge_list("0 1\n# comment\n1 x\n", false, WeightedCascade{});
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 3);
        }
    }
    SUBCASE("negative index") { CHECK_THROWS_AS(load_edge_list("0 -1\n", false, WeightedCascade{}), ValidationError); }
    SUBCASE("self loop") { CHECK_THROWS_AS(load_edge_list("2 2\n", false, WeightedCascade{}), ValidationError); }
    SUBCASE("bad probability") {
        CHECK_THROWS_AS(Graph::from_edges(2, {{0, 1}}, std::vector<double>{1.5}), ValidationError);
    }
}

TEST_CASE("duplicate edges are merged") {
    const auto g = load_edge_list("0 1\n1 0\n0 1\n", false, ConstantProb{0.2});
    CHECK(g.num_edges() == 2);
}

TEST_CASE("dump and parse round trip") {
    const auto g = load_edge_list_file(IVGD_DATA_DIR "/karate.edgelist", false, WeightedCascade{});
    const auto text = dump_graph(g);
    const auto h = parse_graph_dump(text);
    CHECK(dump_graph(h) == text);
    CHECK(sorted_edges(h) == sorted_edges(g));
    for (std::size_t e = 0; e < g.num_edges(); ++e) CHECK(h.prob(e) == g.prob(e));
}

TEST_CASE("in and out adjacency describe the same edges") {
    const auto g = generate_graph(ErdosRenyi{30, 0.2, 5}, WeightedCascade{});
    std::vector<std::size_t> from_out, from_in;
    for (NodeId v = 0; v < g.num_nodes(); ++v) {
        for (auto e : g.out_edges(v)) {
            CHECK(g.edge(e).src == v);
            from_out.push_back(e);
        }
        for (auto e : g.in_edges(v)) {
            CHECK(g.edge(e).dst == v);
            from_in.push_back(e);
        }
    }
    std::sort(from_out.begin(), from_out.end());
    std::sort(from_in.begin(), from_in.end());
    CHECK(from_out == from_in);
    CHECK(from_out.size() == g.num_edges());
}

TEST_CASE("generators") {
    const auto path = generate_graph(PathGraph{3}, ConstantProb{1.0});
    CHECK(sorted_edges(path) == std::vector<Edge>{{0, 1}, {1, 0}, {1, 2}, {2, 1}});

    const auto star = generate_graph(StarGraph{4}, ConstantProb{1.0});
    CHECK(star.num_edges() == 6);
    CHECK(star.out_degree(0) == 3);
    for (NodeId v = 1; v < 4; ++v) {
        REQUIRE(star.out_degree(v) == 1);
        CHECK(star.edge(star.out_edges(v)[0]).dst == 0);
    }

    const auto cycle = generate_graph(CycleGraph{5}, ConstantProb{1.0});
    CHECK(cycle.num_edges() == 10);
    CHECK(cycle.undirected_diameter() == 2);

    CHECK(generate_graph(ErdosRenyi{10, 0.0, 3}, WeightedCascade{}).num_edges() == 0);
    CHECK(sorted_edges(generate_graph(ErdosRenyi{20, 0.3, 9}, WeightedCascade{})) ==
          sorted_edges(generate_graph(ErdosRenyi{20, 0.3, 9}, WeightedCascade{})));
    CHECK_THROWS_AS(generate_graph(PathGraph{0}, WeightedCascade{}), ValidationError);
}

TEST_CASE("generator and rule parsing") {
    CHECK(std::holds_alternative<ErdosRenyi>(parse_graph_kind("er:10:0.5:3")));
    CHECK(std::get<PathGraph>(parse_graph_kind("path:7")).n == 7);
    CHECK_THROWS(parse_graph_kind("grid:3"));
    CHECK(std::get<ConstantProb>(parse_prob_rule("constant:0.25")).p == 0.25);
    CHECK(std::holds_alternative<WeightedCascade>(parse_prob_rule("weighted_cascade")));
    CHECK_THROWS(parse_prob_rule("constant:2"));
}

TEST_CASE("power iteration") {
    SUBCASE("diagonal") {
        Matrix m(2, 2);
        m(0, 0) = 2.0;
        m(1, 1) = 1.0;
        CHECK(power_iteration_norm(dense_operator(m)) == doctest::Approx(2.0).epsilon(1e-8));
    }
    SUBCASE("all-ones row") {
        Matrix m(1, 9, 1.0);
        CHECK(power_iteration_norm(dense_operator(m)) == doctest::Approx(3.0).epsilon(1e-8));
    }
    SUBCASE("zero operator") {
        Matrix m(3, 3);
        CHECK(power_iteration_norm(dense_operator(m)) == 0.0);
    }
    SUBCASE("random 5x5 against a Jacobi oracle") {
        for (std::uint64_t s = 0; s < 5; ++s) {
            Rng rng(s);
            Matrix m(5, 5);
            for (auto& v : m.data) v = rng.normal();
            Matrix ata(5, 5);
            for (std::size_t i = 0; i < 5; ++i)
                for (std::size_t j = 0; j < 5; ++j)
                    for (std::size_t k = 0; k < 5; ++k) ata(i, j) += m(k, i) * m(k, j);
            const double oracle = std::sqrt(jacobi_max_eigenvalue(ata));
            CHECK(power_iteration_norm(dense_operator(m), 5000, 1e-15) == doctest::Approx(oracle).epsilon(1e-6));
        }
    }
    SUBCASE("symmetric matrix with known spectrum") {
        // Q diag(3, -2, 1) Q^T with a Householder Q.
        const Vector u{1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0)};
        Matrix q(3, 3);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) q(i, j) = (i == j ? 1.0 : 0.0) - 2.0 * u[i] * u[j];
        const double d[3] = {3.0, -2.0, 1.0};
        Matrix m(3, 3);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j)
                for (std::size_t k = 0; k < 3; ++k) m(i, j) += q(i, k) * d[k] * q(j, k);
        CHECK(std::abs(power_iteration_norm(dense_operator(m), 1000, 1e-12) - 3.0) <= 1e-9);
    }
    SUBCASE("non-finite input") {
        Matrix m(2, 2, 1.0);
        m(0, 1) = std::nan("");
        CHECK_THROWS_AS(power_iteration_norm(dense_operator(m)), NumericError);
    }
}

TEST_CASE("spectral radius of the constraint") {
    CHECK(spectral_radius_ata(ConstraintSpec{{1.0, 1.0}, 1.0}) == 2.0);
    CHECK(spectral_radius_ata(ConstraintSpec::source_count(34, 4)) == 34.0);
    CHECK(spectral_radius_ata(ConstraintSpec{{3.0, 4.0}, 0.0}) == 25.0);
}

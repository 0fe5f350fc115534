#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ivgd/errors.hpp"
#include "ivgd/inversion.hpp"

using namespace ivgd;

namespace {

VectorMap scale_map(double s) {
    return [s](std::span<const double> x) {
        Vector y(x.begin(), x.end());
        for (auto& v : y) v *= s;
        return y;
    };
}

LipschitzCertificate cert(double estimate) { return {"test", estimate, CertifyMethod::sampled_pairs, 1, 0}; }

DiffusionOperators linear_ops(double sf, double sg) {
    return {scale_map(sf), scale_map(sg), cert(sf), cert(sg)};
}

ResidualDiffusionModel certified_model(const Graph& g, std::uint64_t seed) {
    ResidualDiffusionModel m;
    m.f = PerNodeNet::create(6, 0.9, seed);
    m.ic.t_steps = 3;
    CertifyOptions fo, go;
    fo.n_samples = go.n_samples = 16;
    fo.lo = -1.0;
    fo.hi = 2.0;
    certify_model(m, g, fo, go);
    return m;
}

}  // namespace

TEST_CASE("zero residual maps") {
    const Vector y{0.1, 0.3, 0.25};
    auto r = invert_residual_block(scale_map(0.0), cert(0.0), y, {});
    for (std::size_t i = 0; i < 3; ++i) CHECK(r.solution[i] == 2 * y[i]);
    CHECK(r.converged);

    const auto ops = linear_ops(0.0, 0.0);
    const Vector x{1, 0, 1};
    const auto rep = invert_p(ops, p_forward(ops, x));
    CHECK(rep.z == x);
}

TEST_CASE("linear maps reach their closed-form fixed points") {
    const Vector y{0.3, 0.6, 0.9};
    InversionOptions opts{200, 1e-14};
    const auto r = invert_residual_block(scale_map(0.5), cert(0.5), y, opts);
    for (std::size_t i = 0; i < 3; ++i) CHECK(r.solution[i] == doctest::Approx(4.0 / 3.0 * y[i]).epsilon(1e-12));

    const auto ops = linear_ops(0.5, 0.5);
    const auto rep = invert_p(ops, Vector{0.5625, 0.5625}, opts);
    for (double z : rep.z) CHECK(z == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.converged);
}

TEST_CASE("contraction rate") {
    const Vector y{0.3, 0.6, 0.9, 0.1};
    const auto r = invert_residual_block(scale_map(0.6), cert(0.6), y, {60, 1e-15});
    REQUIRE(r.gaps_l2.size() >= 2);
    for (std::size_t i = 0; i < r.gaps_l2.size(); ++i)
        CHECK(r.gaps_l2[i] <= std::pow(0.6, double(i)) * r.gaps_l2[0] + 1e-9);
}

TEST_CASE("degenerate budget") {
    const auto ops = linear_ops(0.5, 0.5);
    const Vector y{0.2, 0.4};
    const auto rep = invert_p(ops, y, {0, 1e-6});
    CHECK(rep.z == y);
    CHECK(!rep.converged);
}

TEST_CASE("certificate gate") {
    const Vector y{0.2};
    CHECK_THROWS_AS(invert_residual_block(scale_map(0.5), std::nullopt, y, {}), InvertibilityError);
    CHECK_THROWS_AS(invert_residual_block(scale_map(0.5), cert(1.0), y, {}), InvertibilityError);
    auto ops = linear_ops(0.5, 0.5);
    ops.cert_f = cert(1.2);
    CHECK_THROWS_AS(invert_p(ops, y), InvertibilityError);
}

TEST_CASE("miscertified expansive map diverges loudly") {
    const Vector y{0.2, 0.7};
    CHECK_THROWS_AS(invert_residual_block(scale_map(1.5), cert(0.5), y, {50, 1e-12}), NumericError);
}

TEST_CASE("round trip on certified models") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto g = generate_graph(ErdosRenyi{20, 0.2, 100 + s}, WeightedCascade{});
        const auto m = certified_model(g, s);
        REQUIRE(m.certified_invertible());
        const auto ops = m.bind(g);
        Rng rng({s, 1});
        for (int t = 0; t < 5; ++t) {
            Vector x(20, 0.0);
            for (auto& v : x) v = rng.bernoulli(0.2) ? 1.0 : 0.0;
            const InversionOptions opts{200, 1e-10};
            const auto rep = invert_p(ops, p_forward(ops, x), opts);
            CHECK(max_distance(rep.z, x) <= 1e-4);
            CHECK(rep.converged);
            CHECK(rep.residual_f <= 1e-10);
            CHECK(rep.residual_g <= 1e-10);
            CHECK(max_distance(p_forward(ops, rep.z), p_forward(ops, x)) <= 1e-8);
        }
    }
}

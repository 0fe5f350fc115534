#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace ivgd {

/// SplitMix64 finalizer, used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Deterministic random stream keyed by a tuple of counters, so that e.g. the
/// simulation for (seed, group, run) never depends on evaluation order.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}
    Rng(std::initializer_list<std::uint64_t> key) : engine_(derive(key)) {}

    /// Uniform double in [0, 1) built from the top 53 bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound) {
        // Lemire-style rejection keeps the draw unbiased.
        const std::uint64_t limit = (~std::uint64_t{0} / bound) * bound;
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return r % bound;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (portable, unlike std::normal_distribution).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    static std::uint64_t derive(std::initializer_list<std::uint64_t> key) {
        std::uint64_t h = 0x243f6a8885a308d3ULL;
        for (auto k : key) h = mix64(h ^ mix64(k));
        return h;
    }

    std::mt19937_64 engine_;
};

}  // namespace ivgd

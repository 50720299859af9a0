#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace umbra {

/// Seeded random source. Distributions are implemented directly on the raw
/// engine output so that stream contents do not depend on the standard
/// library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        // rejection to avoid modulo bias
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller (one value per call, no caching, so
    /// the draw count is predictable).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    /// Poisson with unit rate via Knuth's product-of-uniforms method:
    /// count the uniforms whose running product stays above e^{-1}.
    unsigned poisson1() {
        static const double threshold = std::exp(-1.0);
        unsigned k = 0;
        double p = 1.0;
        for (;;) {
            p *= uniform();
            if (p <= threshold) return k;
            ++k;
        }
    }

    std::uint64_t raw() { return engine_(); }

    /// Independent child stream; distinct labels give decorrelated streams
    /// from one master seed.
    static Rng child(std::uint64_t master_seed, std::uint64_t stream) {
        return Rng(splitmix64(master_seed + 0x9e3779b97f4a7c15ULL * (stream + 1)));
    }

    static std::uint64_t splitmix64(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace umbra

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace domalign {

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for the stream owned by item `index` under `global_seed`. Per-item
/// streams make results independent of scheduling order.
constexpr std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t index) {
    return mix64(mix64(global_seed) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

/// Seeded random stream. Distributions are implemented here rather than with
/// <random>'s distribution classes, whose output is library-specific, so a
/// fixed seed gives the same bits with any standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n); unbiased via rejection.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % n;
    }

    /// Standard normal (Box-Muller, no cached second variate).
    double normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    Rng split(std::uint64_t index) { return Rng(derive_seed(engine_(), index)); }

private:
    std::mt19937_64 engine_;
};

}  // namespace domalign

#pragma once

// Per-trial random streams.
//
// Derivation rule: the engine is std::mt19937_64 seeded with
//   splitmix64(base_seed ^ splitmix64(trial_index + 0x9E3779B97F4A7C15))
// Both mt19937_64 and splitmix64 are fully specified, so a (seed, index) pair
// yields the same 64-bit stream on every platform. Normal variates are drawn
// with Box-Muller on 53-bit uniforms rather than std::normal_distribution,
// whose algorithm is implementation-defined.

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>

namespace emstad {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

class TrialRng {
public:
    explicit TrialRng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform phase on [0, 2 pi).
    double phase() { return 2.0 * std::numbers::pi * uniform(); }

    /// Circular complex normal with E|w|^2 = 1 (variance 1/2 per component).
    std::complex<double> complex_normal() {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        const double radius = std::sqrt(-std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        return {radius * std::cos(angle), radius * std::sin(angle)};
    }

private:
    std::mt19937_64 engine_;
};

inline TrialRng derive_trial_rng(std::uint64_t base_seed, std::uint64_t trial_index) {
    return TrialRng(splitmix64(base_seed ^ splitmix64(trial_index + 0x9E3779B97F4A7C15ULL)));
}

} // namespace emstad

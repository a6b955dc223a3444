#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace semshape {

// Spreads a (seed, stream) pair into a well-mixed 64-bit engine seed
// (splitmix64 finalizer). Used to seed independent per-chunk generators.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + stream * 0x9E3779B97F4A7C15ull + 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Deterministic uniform/normal sampler on top of std::mt19937_64.
// The engine itself is fully specified by the standard; the transforms here
// replace std::uniform_real_distribution / std::normal_distribution, whose
// outputs are implementation-defined and therefore not reproducible.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform double in [0, 1), 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller. The sine partner is discarded so each
    // draw consumes exactly two engine outputs.
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        // 1 - u1 lies in (0, 1], so the log stays finite.
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(2.0 * kPi * u2);
    }

private:
    static constexpr double kPi = 3.141592653589793238462643383279502884;
    std::mt19937_64 engine_;
};

}  // namespace semshape

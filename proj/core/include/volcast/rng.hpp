#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace volcast {

/// Seeded random source with a fully pinned algorithm: the mt19937_64 engine
/// (bit-exact by the C++ standard) plus explicit uniform/normal transforms.
/// std::uniform_real_distribution / std::normal_distribution are
/// implementation-defined and are never used, so streams reproduce
/// bit-identically across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; consumes exactly two engine steps.
    double normal() {
        // u1 in (0, 1] so the log never sees zero.
        const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Derive an independent stream for a named sub-process.
    static std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
        // SplitMix64 finalizer over (seed, stream); avoids correlated engines.
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 engine_;
};

} // namespace volcast

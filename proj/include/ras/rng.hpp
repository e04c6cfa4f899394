#pragma once

// Counter-based pseudo-random numbers.
//
// Every draw is a pure function of (seed, stream, index):
//
//   key   = seed + 0x9E3779B97F4A7C15 * (stream * 2^32 + index + 1)
//   bits  = splitmix64_finalize(key)
//           z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//           z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//           z =  z ^ (z >> 31)
//   u     = (bits >> 11) * 2^-53                      uniform in [0, 1)
//   normal(i) = Box-Muller on uniforms at counters 2i and 2i+1 (cosine branch)
//
// so weights and samples can be regenerated independently, in any order and
// on any thread.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ras {

inline constexpr std::uint64_t splitmix64_finalize(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class CounterRng {
public:
    explicit constexpr CounterRng(std::uint64_t seed) : seed_(seed) {}

    constexpr std::uint64_t seed() const { return seed_; }

    constexpr std::uint64_t bits(std::uint64_t stream, std::uint64_t index) const {
        const std::uint64_t counter = (stream << 32) + index + 1;
        return splitmix64_finalize(seed_ + 0x9E3779B97F4A7C15ULL * counter);
    }

    /// Uniform in [0, 1).
    double uniform(std::uint64_t stream, std::uint64_t index) const {
        return static_cast<double>(bits(stream, index) >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(std::uint64_t stream, std::uint64_t index, double lo, double hi) const {
        return lo + (hi - lo) * uniform(stream, index);
    }

    /// Standard normal.
    double normal(std::uint64_t stream, std::uint64_t index) const {
        const double u1 = 1.0 - uniform(stream, 2 * index);  // (0, 1]
        const double u2 = uniform(stream, 2 * index + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Independent generator for a sub-task (query, layer, ...).
    CounterRng derive(std::uint64_t tag) const {
        return CounterRng(splitmix64_finalize(seed_ ^ splitmix64_finalize(tag + 0xD1B54A32D192ED03ULL)));
    }

private:
    std::uint64_t seed_;
};

}  // namespace ras

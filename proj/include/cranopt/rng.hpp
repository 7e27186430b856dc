#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>

// Reproducible random streams.
//
// Every stochastic quantity in the library is drawn from an mt19937_64
// engine keyed by (seed, stream) through a splitmix64 hash, and all
// variate transforms are written out explicitly instead of going through
// std::*_distribution (whose output is implementation-defined).  Two runs
// with the same seed therefore produce bit-identical draws, and distinct
// streams (one per Monte-Carlo trial) can be consumed in any order.

namespace cranopt::rng {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Engine for substream `stream` of the master `seed`.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t stream) {
    const std::uint64_t key = splitmix64(splitmix64(seed) ^ splitmix64(~stream));
    return std::mt19937_64(key);
}

// Uniform on [0, 1) with 53 random mantissa bits.
inline double uniform01(std::mt19937_64& eng) {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller; uses two uniforms per draw.
inline double standard_normal(std::mt19937_64& eng) {
    const double u1 = 1.0 - uniform01(eng);  // (0, 1]: keeps the log finite
    const double u2 = uniform01(eng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Circularly-symmetric complex normal with E|z|^2 = 1.
inline std::complex<double> complex_normal(std::mt19937_64& eng) {
    const double u1 = 1.0 - uniform01(eng);
    const double u2 = uniform01(eng);
    const double r = std::sqrt(-std::log(u1));
    return {r * std::cos(2.0 * std::numbers::pi * u2),
            r * std::sin(2.0 * std::numbers::pi * u2)};
}

}  // namespace cranopt::rng

#pragma once

// Counter-based Gaussian sampling. Every draw is a pure function of
// (seed, stream, counter), so paths can be extended in either direction or
// regenerated piecewise without perturbing values already in use.

#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace mvlab::rng {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash3(std::uint64_t seed, std::uint64_t stream,
                                     std::uint64_t counter) noexcept {
    std::uint64_t h = splitmix64(seed ^ 0x6A09E667F3BCC908ULL);
    h = splitmix64(h ^ (stream * 0xD1B54A32D192ED03ULL));
    return splitmix64(h ^ (counter * 0x8CB92BA72F3D8DD7ULL));
}

/// Derive an independent seed from a parent seed and a tag.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
    return hash3(seed, 0xA0761D6478BD642FULL, tag);
}

/// Uniform in the open interval (0, 1).
inline double uniform(std::uint64_t seed, std::uint64_t stream, std::int64_t counter) noexcept {
    const std::uint64_t h = hash3(seed, stream, static_cast<std::uint64_t>(counter));
    return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal via Box-Muller on two decorrelated hashes.
inline double normal(std::uint64_t seed, std::uint64_t stream, std::int64_t counter) noexcept {
    const std::uint64_t h1 = hash3(seed, stream, static_cast<std::uint64_t>(counter));
    const std::uint64_t h2 = splitmix64(h1 ^ 0xE7037ED1A0B428DBULL);
    const double u1 = (static_cast<double>(h1 >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = static_cast<double>(h2 >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Stream tags used across modules; kept in one place so they never collide.
enum Tag : std::uint64_t {
    kParticleNoise = 0x1001,
    kOuInit = 0x1002,
    kInitialCloud = 0x1003,
    kProbe = 0x1004,
    kLawSeed = 0x1005,
    kOmegaEnsemble = 0x1006,
};

inline std::uint64_t particle_seed(std::uint64_t path_seed, std::uint64_t particle) noexcept {
    return hash3(path_seed, kParticleNoise, particle);
}

}  // namespace mvlab::rng

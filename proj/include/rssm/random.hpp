#pragma once

#include <cstdint>
#include <random>

#include "rssm/linalg.hpp"

namespace rssm {

/// Seedable stream of uniforms and Gaussians with splittable sub-streams.
/// Engine is mt19937_64 (bit-exact across standard libraries); uniforms and
/// the Box-Muller transform are fixed here so that draws are reproducible
/// across platforms and bindings. Two samplers must never share one stream.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    /// Derives an independent child stream. Deterministic in (seed, stream_id).
    RandomStream split(std::uint64_t stream_id) const;

    /// Uniform on (0, 1].
    double uniform();

    /// Standard normal via Box-Muller on two uniforms (second value cached).
    double gaussian();

    /// Vector of iid standard normals.
    Vec gaussian_vector(Eigen::Index n);

    /// Index in [0, weights.size()) sampled proportionally to weights.
    int categorical(const Vec& weights);

    std::uint64_t seed() const { return seed_; }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

/// splitmix64 finaliser; used to derive sub-stream seeds.
std::uint64_t mix64(std::uint64_t x);

}  // namespace rssm

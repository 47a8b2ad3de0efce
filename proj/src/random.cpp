#include "rssm/random.hpp"

#include <cmath>
#include <numbers>

namespace rssm {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

RandomStream RandomStream::split(std::uint64_t stream_id) const {
    return RandomStream(mix64(seed_ ^ mix64(stream_id + 1)));
}

double RandomStream::uniform() {
    // 53-bit mantissa, shifted into (0, 1] so log() below is always finite.
    std::uint64_t bits = engine_();
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

double RandomStream::gaussian() {
    if (has_cached_) {
        has_cached_ = false;
        return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * std::numbers::pi * u2;
    cached_ = radius * std::sin(angle);
    has_cached_ = true;
    return radius * std::cos(angle);
}

Vec RandomStream::gaussian_vector(Eigen::Index n) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = gaussian();
    return v;
}

int RandomStream::categorical(const Vec& weights) {
    double total = weights.sum();
    double u = uniform() * total;
    double cum = 0.0;
    int last_supported = 0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        if (weights(i) <= 0.0) continue;
        last_supported = static_cast<int>(i);
        cum += weights(i);
        if (u <= cum) return last_supported;
    }
    // Rounding in the running sum can leave u marginally above it; fall back
    // to the last entry that actually carries mass.
    return last_supported;
}

}  // namespace rssm

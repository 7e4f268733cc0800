#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace krsvqg {

// 64-bit FNV-1a, used to derive stable per-key seeds from strings.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic random source. mt19937_64 is fully specified by the
// standard; the distribution transforms below are hand-rolled because the
// std::*_distribution classes are implementation-defined and this project
// promises byte-identical outputs for a fixed seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    std::uint64_t bounded(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = engine_();
            if (r >= threshold) return r % n;
        }
    }

    bool bernoulli(double p) { return uniform01() < p; }

    // Box-Muller (cosine branch only, so draws stay one-to-one with the
    // engine sequence).
    double normal(double mean = 0.0, double stddev = 1.0) {
        const double u1 = 1.0 - uniform01();  // (0, 1]
        const double u2 = uniform01();
        const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        return mean + stddev * z;
    }

    // Normal clipped to +/- 2 stddev by resampling.
    double truncated_normal(double mean, double stddev) {
        for (;;) {
            const double z = normal(0.0, 1.0);
            if (std::abs(z) <= 2.0) return mean + stddev * z;
        }
    }

    // In-place Fisher-Yates.
    template <class Vec>
    void shuffle(Vec& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace krsvqg

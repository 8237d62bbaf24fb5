#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>

namespace diffrx {

// splitmix64 finalizer; maps (seed, stream index) to an independent seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    // Unseeded generator drawn from the OS entropy source.
    Rng() : engine_(std::random_device{}()), seeded_(false) {}
    explicit Rng(std::uint64_t seed) : engine_(seed), seeded_(true) {}

    bool seeded() const noexcept { return seeded_; }

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
    double exponential(double mean) { return -mean * std::log1p(-uniform_(engine_)); }

    // Integer uniform on [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }

    // Circularly-symmetric complex Gaussian with E|z|^2 = variance.
    std::complex<double> complex_normal(double variance = 1.0) {
        const double s = std::sqrt(variance / 2.0);
        const double re = normal();
        const double im = normal();
        return {s * re, s * im};
    }

    std::uint64_t next_u64() { return engine_(); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    bool seeded_;
};

} // namespace diffrx

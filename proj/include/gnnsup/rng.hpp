#pragma once

// Reproducible random streams.
//
// Engine: std::mt19937_64, whose output sequence is fixed by the C++
// standard. Streams are derived as seed_stream = splitmix64(seed ^
// splitmix64(stream + 1)), so every (seed, stream) pair gives an
// independent generator. Distributions are implemented here rather than
// taken from <random>, whose distribution algorithms are
// implementation-defined:
//   uniform()       = (next() >> 11) * 2^-53               in [0, 1)
//   uniform_int(n)  = rejection sampling on next() to avoid modulo bias
//   normal()        = Box-Muller, cosine branch only, no caching
//   bernoulli(p)    = uniform() < p

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace gnnsup {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : engine_(splitmix64(seed ^ splitmix64(stream + 1))) {}

    std::uint64_t next() { return engine_(); }

    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next();
        while (x >= limit) x = next();
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_int(i)]);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace gnnsup

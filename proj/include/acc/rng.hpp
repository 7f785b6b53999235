#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace acc {

// Counter-free splitmix64 step; also used to mix keys into stream seeds.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t mix_key(uint64_t seed, uint64_t key) {
    uint64_t s = seed ^ (0x9e3779b97f4a7c15ull * (key + 1));
    return splitmix64(s);
}

// Deterministic, platform-independent RNG. All randomness in the project
// (init, shuffles, dropout, corpus synthesis) goes through this type; the
// std <random> distributions are avoided because their output is not
// specified bit-for-bit across standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // Warm up so small seeds do not produce correlated first draws.
        splitmix64(state_);
    }

    // Derive an independent stream keyed by one or more indices.
    Rng fork(uint64_t key) const { return Rng(mix_key(state_, key)); }
    Rng fork(uint64_t k1, uint64_t k2) const { return Rng(mix_key(mix_key(state_, k1), k2)); }

    uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    int range(int lo, int hi_inclusive) {
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
    }

    // Box-Muller; deterministic given the stream.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Normal clipped to +-2 sigma by resampling.
    double truncated_normal(double stddev) {
        for (;;) {
            double z = normal();
            if (z >= -2.0 && z <= 2.0) return z * stddev;
        }
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
};

}  // namespace acc

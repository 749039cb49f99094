#pragma once

#include <cstdint>
#include <cmath>

namespace rear {

// Named purposes for derived RNG streams. Every source of randomness in the
// project is a pure function of (root seed, stream id, counter chain), so a
// run can be reproduced or resumed from scalar counters alone.
enum class RngStream : uint64_t {
    DataOrder = 1,
    NoiseLevel = 2,
    Corruption = 3,
    LabelDropout = 4,
    Dropout = 5,
    Sampling = 6,
    Init = 7,
    MaskChoice = 8,
    Experiment = 9,
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t seed, RngStream stream, uint64_t a = 0, uint64_t b = 0) {
    uint64_t s = splitmix64(seed ^ 0x5851f42d4c957f2dull);
    s = splitmix64(s ^ static_cast<uint64_t>(stream));
    s = splitmix64(s ^ a);
    s = splitmix64(s ^ b);
    return s;
}

// xoshiro256** — small, fast, and identical on every platform.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t s = seed;
        for (auto& w : state_) {
            s = splitmix64(s);
            w = s;
        }
    }
    Rng(uint64_t seed, RngStream stream, uint64_t a = 0, uint64_t b = 0)
        : Rng(mix_seed(seed, stream, a, b)) {}

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform on [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Bias is < n / 2^64, irrelevant at our scales.
    uint64_t below(uint64_t n) {
        return static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        // Box-Muller; one value per call keeps the stream stateless-friendly.
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<uint64_t>(last - first);
        for (uint64_t i = n; i > 1; --i) {
            const uint64_t j = below(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t state_[4];
};

}  // namespace rear

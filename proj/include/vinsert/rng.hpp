#pragma once

#include <cmath>
#include <cstdint>

#include "common.hpp"

namespace vinsert {

// xoshiro256** with hand-rolled distributions so draws are identical across
// standard libraries. Every stochastic component takes one of these seeded
// from the run seed via mix_seed.
struct Rng {
    uint64_t s[4];

    explicit Rng(uint64_t seed = 0) {
        for (int i = 0; i < 4; i++) s[i] = mix_seed(seed, 0xabcd0000 + i);
    }

    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t next_u64() {
        uint64_t result = rotl(s[1] * 5, 7) * 9;
        uint64_t t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    int uniform_int(int n) { return n <= 1 ? 0 : (int)(next_u64() % (uint64_t)n); }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; one value per call, no caching so the stream is position-independent
    double normal() {
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    float normalf() { return (float)normal(); }
};

}  // namespace vinsert

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

// Counter-free splitmix64 generator. std::mt19937 is portable but the
// standard distributions are not; everything here is spelled out so that
// streams are bit-identical across platforms and compilers.

namespace pmix {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stable seed derivation: mixes a parent seed with a stream tag and index,
// so independent components (routers, experts, sequences, tensors) get
// decorrelated streams from one master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
    std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL + tag * 0xc2b2ae3d27d4eb4fULL);
    splitmix64(s);
    s ^= index * 0xff51afd7ed558ccdULL + 0x2545f4914f6cdd1dULL;
    splitmix64(s);
    return s;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // burn-in so near-zero seeds do not start in a low-entropy region
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, n) without modulo bias.
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) return 0;
        std::uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller (deterministic, no cached spare).
    double next_normal() {
        double u1, u2;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Normal truncated to +-2 sigma (rejection), scaled by stddev.
    double next_trunc_normal(double stddev) {
        double z;
        do {
            z = next_normal();
        } while (z < -2.0 || z > 2.0);
        return z * stddev;
    }

private:
    std::uint64_t state_;
};

}  // namespace pmix

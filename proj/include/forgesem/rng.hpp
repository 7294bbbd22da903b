#pragma once

#include <cmath>
#include <cstdint>

namespace forgesem {

// All randomness in the project flows through this generator. std::mt19937
// plus the standard distributions would work, but the distributions are
// implementation-defined; a self-contained PCG keeps every draw reproducible
// and the state trivially serializable (two u64 words).

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Pcg32 {
public:
    Pcg32() : Pcg32(0x853c49e6748fea9bULL, 0xda3e39cb94b95bdbULL) {}

    explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 1) {
        state_ = 0;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    // Derives an independent generator; used to give every image / parameter
    // its own stream so work can be reordered without changing draws.
    static Pcg32 derive(std::uint64_t seed, std::uint64_t index) {
        std::uint64_t s = seed;
        std::uint64_t t = splitmix64(s) + index;
        const std::uint64_t mixed = splitmix64(t);
        std::uint64_t u = index ^ 0x9e3779b97f4a7c15ULL;
        return Pcg32(mixed, splitmix64(u) | 1u);
    }

    std::uint32_t next_u32() {
        std::uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u32()) * (1.0 / 4294967296.0);
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased uniform integer in [0, n).
    std::uint32_t uniform_int(std::uint32_t n) {
        if (n == 0) return 0;
        std::uint32_t threshold = (-n) % n;
        for (;;) {
            std::uint32_t r = next_u32();
            if (r >= threshold) return r % n;
        }
    }

    // Box-Muller; consumes two draws per pair, caches the second.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 1e-12);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    std::uint64_t state() const { return state_; }
    std::uint64_t stream() const { return inc_; }
    void restore(std::uint64_t state, std::uint64_t inc) {
        state_ = state;
        inc_ = inc;
        has_cached_ = false;
    }

private:
    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 0;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

} // namespace forgesem

#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace obn {

/// Deterministic, platform-stable PRNG (xoshiro256++ seeded via splitmix64).
/// std::mt19937 + std::normal_distribution are implementation-defined across
/// standard libraries; everything random in this project flows through Rng so
/// that a seed pins the run bit-for-bit.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& s : state_) s = splitmix64(x);
    }

    /// Derive an independent stream for a subsystem, keyed by a stable label.
    Rng fork(std::string_view label) const {
        uint64_t h = 1469598103934665603ull; // FNV-1a
        for (char c : label) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        uint64_t mix = state_[0] ^ (state_[2] + h);
        return Rng(mix ^ (h << 1));
    }

    uint64_t next() {
        uint64_t const result = rotl(state_[0] + state_[3], 23) + state_[0];
        uint64_t const t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    uint64_t uniform_int(uint64_t n) { return next() % n; }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (one value per call; pair cached).
    double gaussian() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    /// Serializable state (checkpointing).
    void save_state(uint64_t out[6]) const {
        for (int i = 0; i < 4; ++i) out[i] = state_[i];
        out[4] = have_cached_ ? 1 : 0;
        double c = cached_;
        uint64_t bits;
        static_assert(sizeof(bits) == sizeof(c));
        __builtin_memcpy(&bits, &c, sizeof(bits));
        out[5] = bits;
    }
    void load_state(const uint64_t in[6]) {
        for (int i = 0; i < 4; ++i) state_[i] = in[i];
        have_cached_ = in[4] != 0;
        __builtin_memcpy(&cached_, &in[5], sizeof(cached_));
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t state_[4];
    double cached_ = 0.0;
    bool have_cached_ = false;
};

} // namespace obn

#pragma once

#include <cstdint>
#include <cmath>

namespace coreflow {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl64(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace detail

// Splittable deterministic generator: xoshiro256++ seeded through splitmix64
// from (seed, stream_id). Distinct stream ids give independent-behaving
// sequences, so per-sample / per-trajectory streams never interleave.
// Normals come from Box-Muller; everything is plain u64 / f64 arithmetic.
class RngStream {
public:
    RngStream() : RngStream(0, 0) {}
    RngStream(std::uint64_t seed, std::uint64_t stream_id) {
        std::uint64_t sm = seed ^ (0x9E3779B97F4A7C15ull * (stream_id + 1));
        for (auto& w : s_) w = detail::splitmix64(sm);
        bool all_zero = true;
        for (auto w : s_) all_zero &= (w == 0);
        if (all_zero) s_[0] = 1;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = detail::rotl64(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = detail::rotl64(s_[3], 45);
        return result;
    }

    // uniform on (0, 1]: never returns 0, so log() below is safe
    double uniform01() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    std::uint64_t uniform_index(std::uint64_t n) {
        // rejection-free modulo is fine here: n is tiny relative to 2^64
        return n == 0 ? 0 : next_u64() % n;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool have_spare_ = false;
};

inline RngStream rng_stream(std::uint64_t seed, std::uint64_t stream_id) {
    return RngStream(seed, stream_id);
}

}  // namespace coreflow

#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "mcddpm/tensor.hpp"

namespace mcddpm {

/// Deterministic 64-bit PRNG (xoshiro256** seeded via splitmix64) with
/// explicitly specified uniform/gaussian transforms. Standard-library
/// distributions are implementation-defined, which would break the
/// byte-reproducibility contract of seeded runs.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_int(std::uint64_t n) {
        // rejection sampling to avoid modulo bias
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal draw (Box-Muller, pairwise cached).
    double gaussian() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(theta);
        have_cached_ = true;
        return r * std::cos(theta);
    }

    template <typename S>
    Tensor<S> gaussian_tensor(std::vector<int> dims) {
        Tensor<S> t(std::move(dims));
        for (auto& v : t.data) v = static_cast<S>(gaussian());
        return t;
    }

    static std::uint64_t splitmix64(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4];
    bool have_cached_ = false;
    double cached_ = 0.0;
};

/// Derives an independent child seed from (seed, purpose tag, index).
/// Used so that per-slice / per-epoch streams never overlap.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
    std::uint64_t h = seed ^ 0x51'7c'c1'b7'27'22'0a'95ULL;
    for (char c : tag) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 0x100000001b3ULL;
    }
    h ^= index + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    std::uint64_t x = h;
    return RandomStream::splitmix64(x);
}

}  // namespace mcddpm

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace lodestone {

/// 64-bit FNV-1a over arbitrary bytes. Used for stream derivation and
/// artifact fingerprints.
inline uint64_t fnv1a64(std::string_view bytes, uint64_t seed = 0xcbf29ce484222325ull) {
    uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Deterministic counter-based generator (splitmix64). All randomness in the
/// library flows through this type so that artifacts are byte-identical
/// across platforms and standard-library versions; std::uniform_*
/// distributions are implementation-defined and are deliberately avoided.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Unbiased integer in [0, n). Lemire's multiply-shift with rejection.
    uint64_t below(uint64_t n) {
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
        auto lo = static_cast<uint64_t>(m);
        if (lo < n) {
            const uint64_t threshold = (0 - n) % n;
            while (lo < threshold) {
                m = static_cast<unsigned __int128>(next_u64()) * n;
                lo = static_cast<uint64_t>(m);
            }
        }
        return static_cast<uint64_t>(m >> 64);
    }

    /// Uniform double in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// k distinct indices drawn uniformly from [0, n), in draw order.
    std::vector<size_t> sample_indices(size_t n, size_t k) {
        if (k > n) k = n;
        std::vector<size_t> pool(n);
        for (size_t i = 0; i < n; ++i) pool[i] = i;
        std::vector<size_t> out;
        out.reserve(k);
        for (size_t i = 0; i < k; ++i) {
            const size_t j = i + static_cast<size_t>(below(n - i));
            std::swap(pool[i], pool[j]);
            out.push_back(pool[i]);
        }
        return out;
    }

private:
    uint64_t state_;
};

/// Derives an independent stream from a global seed and a string tag, e.g.
/// (seed, "label", example_id). Parallel workers using per-item streams
/// produce results independent of scheduling order.
inline Rng derive_rng(uint64_t seed, std::string_view tag) {
    return Rng(fnv1a64(tag, seed ^ 0x6a09e667f3bcc909ull));
}

inline Rng derive_rng(uint64_t seed, std::string_view tag, std::string_view sub) {
    return Rng(fnv1a64(sub, fnv1a64(tag, seed ^ 0x6a09e667f3bcc909ull)));
}

inline Rng derive_rng(uint64_t seed, std::string_view tag, uint64_t n) {
    char buf[sizeof(uint64_t)];
    for (size_t i = 0; i < sizeof(uint64_t); ++i) buf[i] = static_cast<char>((n >> (8 * i)) & 0xff);
    return Rng(fnv1a64(std::string_view(buf, sizeof(buf)), fnv1a64(tag, seed ^ 0x6a09e667f3bcc909ull)));
}

}  // namespace lodestone

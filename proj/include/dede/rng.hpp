#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "dede/errors.hpp"

namespace dede {

// Counter-based deterministic generator. Every draw is a pure function of
// (seed, stream, counter), so identical triples reproduce identical values
// regardless of how work is partitioned across streams.
class Rng {
public:
    explicit Rng(uint64_t seed, uint64_t stream = 0)
        : seed_(seed), stream_(stream), base_(derive_base(seed, stream)) {}

    // Independent substream with its own counter starting at zero.
    Rng stream(uint64_t substream) const {
        return Rng(seed_, mix(stream_ * 0x9E3779B97F4A7C15ULL + substream + 1));
    }

    uint64_t seed() const { return seed_; }
    uint64_t stream_id() const { return stream_; }
    uint64_t counter() const { return counter_; }

    uint64_t next_u64() {
        uint64_t x = base_ + counter_ * 0x9E3779B97F4A7C15ULL;
        ++counter_;
        return mix(x);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; consumes exactly two raw draws.
    double normal() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; // (0, 1]
        double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Unbiased integer in [0, n) by rejection.
    uint64_t below(uint64_t n) {
        if (n == 0) throw ContractError("rng: below(0)");
        uint64_t bound = ~uint64_t{0} - (~uint64_t{0} % n);
        uint64_t x = next_u64();
        while (x >= bound) x = next_u64();
        return x % n;
    }

    // Fisher-Yates permutation of {0..n-1}.
    std::vector<int> permutation(int n) {
        std::vector<int> p(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
        for (int i = n - 1; i > 0; --i) {
            int j = static_cast<int>(below(static_cast<uint64_t>(i) + 1));
            std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
        }
        return p;
    }

    // k distinct indices from {0..n-1}, uniform over subsets, sorted ascending.
    std::vector<int> subset(int n, int k) {
        if (k < 0 || k > n) throw ContractError("rng: subset requires 0 <= k <= n");
        std::vector<int> pool(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
        for (int i = 0; i < k; ++i) {
            int j = i + static_cast<int>(below(static_cast<uint64_t>(n - i)));
            std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
        }
        std::vector<int> out(pool.begin(), pool.begin() + k);
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    static uint64_t mix(uint64_t x) {
        // splitmix64 finalizer
        x ^= x >> 30;
        x *= 0xBF58476D1CE4E5B9ULL;
        x ^= x >> 27;
        x *= 0x94D049BB133111EBULL;
        x ^= x >> 31;
        return x;
    }

    static uint64_t derive_base(uint64_t seed, uint64_t stream) {
        return mix(mix(seed) ^ mix(stream * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
    }

    uint64_t seed_;
    uint64_t stream_;
    uint64_t base_;
    uint64_t counter_ = 0;
};

} // namespace dede

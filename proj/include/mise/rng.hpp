#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "mise/error.hpp"

namespace mise {

// splitmix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Seed for the `index`-th child stream of `base` (tasks, episodes, repeats).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
    return mix_seed(mix_seed(base) ^ mix_seed(index + 0x632BE59BD9B4E019ULL));
}

/// Seeded generator. Bounded and real draws are computed here rather than via
/// <random> distributions so that streams are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(mix_seed(seed)) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n) by rejection (no modulo bias).
    std::size_t below(std::size_t n) {
        if (n == 0) throw UsageError("Rng::below(0)");
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<std::size_t>(x % bound);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Index drawn proportionally to non-negative weights.
    std::size_t categorical(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (!(total > 0.0)) throw UsageError("categorical: weights must have positive sum");
        const double r = uniform() * total;
        double c = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            c += weights[i];
            if (r < c) return i;
        }
        return weights.size() - 1;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

    /// First `k` entries of a uniformly random permutation of `pool` (sampling without replacement).
    template <class T>
    std::vector<T> sample(std::vector<T> pool, std::size_t k) {
        if (k > pool.size()) throw UsageError("sample: k exceeds pool size");
        for (std::size_t i = 0; i < k; ++i) {
            std::swap(pool[i], pool[i + below(pool.size() - i)]);
        }
        pool.resize(k);
        return pool;
    }

    friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace mise

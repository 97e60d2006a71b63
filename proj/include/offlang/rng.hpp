#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace offlang {

inline std::uint64_t split_mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent stream seed for (seed, stream); used for per-tree, per-member
// and per-batch RNGs so that parallel work stays reproducible.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return split_mix64(split_mix64(seed) + 0x9e3779b97f4a7c15ULL * (stream + 1));
}

// mt19937_64 with hand-rolled draws. std::*_distribution output is not
// pinned by the standard, so everything beyond the raw engine is ours.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Unbiased integer in [0, bound), bound > 0.
    std::uint64_t bounded(std::uint64_t bound) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % bound;
    }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(bounded(n)); }

    // Uniform in [0, 1) with 53 random bits.
    double real() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * real(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

} // namespace offlang

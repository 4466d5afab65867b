#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace atomflex {

// Deterministic, splittable random generator built on the SplitMix64 mixing
// function. Every stream is fully defined by a 64-bit state, so identical
// seeds produce identical sequences on every platform and compiler. Child
// streams are derived by hashing a tag into the parent seed, which lets the
// training loop hand out independent, reproducible streams (init, shuffle,
// dropout) without any shared mutable state.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    /// Next raw 64-bit value (SplitMix64 step).
    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 bits of precision. Implemented
    /// directly (not via std::uniform_real_distribution, whose output is
    /// implementation-defined).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        // Multiply-shift rejection-free mapping; bias is < 2^-64 * n,
        // negligible for the sizes used here.
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Independent child stream derived from this stream's seed and a tag.
    /// Does not advance this stream.
    Rng split(std::uint64_t tag) const {
        return Rng(mix(state_ ^ mix(tag ^ 0xa0761d6478bd642fULL)));
    }

    /// Child stream tagged by a string (FNV-1a over the bytes).
    Rng split(std::string_view tag) const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (char c : tag) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return split(h);
    }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

}  // namespace atomflex

#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace fedqnn {

// Deterministic sampling helpers on top of std::mt19937_64.
//
// The engine itself is fully specified by the standard, but the library
// distributions (uniform_int_distribution etc.) are implementation-defined,
// so seeded runs would not reproduce across standard libraries. Everything
// seed-sensitive in this project draws through these helpers instead.

/// Uniform double in [0, 1) using the top 53 bits of one engine draw.
inline double uniform_unit(std::mt19937_64 &rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform double in [lo, hi).
inline double uniform_in(std::mt19937_64 &rng, double lo, double hi) {
    return lo + (hi - lo) * uniform_unit(rng);
}

/// Uniform integer in [0, n) by rejection; n must be positive.
inline std::uint64_t uniform_below(std::mt19937_64 &rng, std::uint64_t n) {
    const std::uint64_t limit = std::mt19937_64::max() - std::mt19937_64::max() % n;
    std::uint64_t draw = rng();
    while (draw >= limit) {
        draw = rng();
    }
    return draw % n;
}

/// Fisher-Yates shuffle with a pinned draw sequence.
template <typename T>
void deterministic_shuffle(std::vector<T> &items, std::mt19937_64 &rng) {
    if (items.size() < 2) {
        return;
    }
    for (std::size_t i = items.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(uniform_below(rng, i + 1));
        using std::swap;
        swap(items[i], items[j]);
    }
}

/// Derives an independent stream seed from a base seed and an index
/// (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace fedqnn

#pragma once

// Portable seeded randomness. The standard <random> distributions are
// implementation-defined, so every draw that feeds a report goes through the
// helpers here, which only consume raw std::mt19937_64 output (whose sequence
// is fixed by the standard).

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>

namespace protoshot {

using Rng = std::mt19937_64;

inline constexpr std::string_view kRngName = "std::mt19937_64";
inline constexpr std::string_view kSeedMixName =
    "splitmix64 chain: h = splitmix64(base); for each tag t: h = splitmix64(h ^ t)";

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Derive an independent stream seed from a base seed and a sequence of tags
// (fold, k, purpose, ...).
std::uint64_t mix_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) noexcept;

// Purpose tags used when deriving streams.
enum class SeedPurpose : std::uint64_t {
    Folds = 0x666f6c6473ULL,        // "folds"
    Support = 0x737570706f7274ULL,  // "support"
    Replicate = 0x7265706cULL,      // "repl"
};

// Uniform double in [0, 1) from the top 53 bits.
double uniform01(Rng& rng) noexcept;

// Uniform integer in [0, bound) by rejection sampling; bound > 0.
std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) noexcept;

// Uniform integer in [lo, hi], lo <= hi.
std::uint64_t uniform_between(Rng& rng, std::uint64_t lo, std::uint64_t hi) noexcept;

// Standard normal via Box-Muller (one value per call, no cached pair).
double standard_normal(Rng& rng) noexcept;

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_below(rng, i));
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace protoshot

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace lorica {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Child seed for a (base, tag...) path, e.g. derive_seed(seed, {round, client}).
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = mix_seed(base);
    for (auto t : tags) s = mix_seed(s ^ mix_seed(t + 0x632be59bd9b4e019ULL));
    return s;
}

}  // namespace lorica

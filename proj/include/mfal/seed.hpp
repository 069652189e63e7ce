#pragma once

#include <cstdint>
#include <string_view>

namespace mfal {

constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Run seed → (round, purpose) sub-seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t round, std::string_view purpose) {
    return splitmix64(splitmix64(seed ^ splitmix64(round)) ^ fnv1a(purpose));
}

/// Per-(seed, sample id) seed for order-independent draws.
constexpr std::uint64_t sample_seed(std::uint64_t seed, std::string_view id) {
    return splitmix64(seed ^ fnv1a(id));
}

} // namespace mfal

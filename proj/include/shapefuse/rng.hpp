// Seed plumbing: every random draw in the library flows through a
// mersenne-twister engine whose seed is derived from the run seed with
// splitmix64, so per-item work can be reordered or parallelised without
// changing the output.

#pragma once

#include <cstdint>
#include <random>

namespace shapefuse {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Stable per-item seed: mixes the run seed with an item index (and an
/// optional attempt counter for resampling).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t item, std::uint64_t attempt = 0) {
    return splitmix64(splitmix64(seed ^ 0x517cc1b727220a95ULL) + splitmix64(item) + 0x2545f4914f6cdd1dULL * attempt);
}

inline std::mt19937_64 make_engine(std::uint64_t seed) { return std::mt19937_64(seed); }

} // namespace shapefuse

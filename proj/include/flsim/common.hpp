#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace flsim {

/// Invalid configuration or mismatched shapes supplied by the caller.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Clustering produced no usable structure (all points identical, empty cluster).
struct DegenerateClustering : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent substreams from a master
// seed so that (seed, stream, index) tuples never collide in practice.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::uint64_t index = 0) {
    return mix64(mix64(master ^ mix64(stream)) ^ mix64(index));
}

}  // namespace flsim

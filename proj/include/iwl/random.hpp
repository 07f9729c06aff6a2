#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

namespace iwl {

using Engine = std::mt19937_64;

// Boost distributions produce the same variates on every standard library,
// which keeps reports byte-identical across toolchains. The normal sampler
// is a ziggurat, noticeably faster than the polar method.
using Normal = boost::random::normal_distribution<double>;
using Uniform = boost::random::uniform_real_distribution<double>;
using Poisson = boost::random::poisson_distribution<std::size_t, double>;

/// splitmix64 finalizer; used to derive independent stream keys.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives a stream key from a root seed and a path of tags, e.g.
/// derive_seed(seed, {world, cloud, particle}). Distinct paths give
/// unrelated keys, so results never depend on evaluation order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = mix64(seed ^ 0x6a09e667f3bcc909ULL);
    for (std::uint64_t tag : path) h = mix64(h ^ mix64(tag + 0x3c6ef372fe94f82bULL));
    return h;
}

inline Engine make_engine(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    return Engine(derive_seed(seed, path));
}

// Stream tags for derive_seed. Kept in one place so two subsystems never
// draw from the same stream by accident.
namespace stream {
inline constexpr std::uint64_t kEvents = 1;
inline constexpr std::uint64_t kBrownian = 2;
inline constexpr std::uint64_t kCommon = 3;
inline constexpr std::uint64_t kIdio = 4;
inline constexpr std::uint64_t kWorld = 5;
inline constexpr std::uint64_t kLawCloud = 6;
inline constexpr std::uint64_t kCopyCloud = 7;
inline constexpr std::uint64_t kDriver = 8;
inline constexpr std::uint64_t kReference = 9;
inline constexpr std::uint64_t kScenario = 10;
inline constexpr std::uint64_t kQuadrature = 11;
}  // namespace stream

}  // namespace iwl

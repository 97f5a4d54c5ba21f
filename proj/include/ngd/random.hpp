#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace ngd {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Purpose tags keep the streams used inside one step disjoint.
enum class StreamPurpose : std::uint64_t {
  Batch = 1,
  AuxiliaryBatch = 2,
  Initialization = 3,
  Verification = 4,
  Replication = 5,
};

/// Seed of the stream keyed by (master, replication, step, purpose).
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t replication, std::uint64_t step,
                                 StreamPurpose purpose = StreamPurpose::Batch) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ (replication + 0x632be59bd9b4e019ULL));
  h = splitmix64(h ^ (step + 0x8cb92ba72f3d8dd7ULL));
  return splitmix64(h ^ static_cast<std::uint64_t>(purpose));
}

/// Uniform draw in [0, 1) with 53 random bits; independent of the standard library's distributions
/// so that streams are bit-reproducible across toolchains.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform draw in (0, 1).
inline double uniform_open01(Rng& rng) {
  double u;
  do {
    u = uniform01(rng);
  } while (u == 0.0);
  return u;
}

inline double standard_normal(Rng& rng) {
  // Box-Muller, one variate per call.
  const double u1 = uniform_open01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline std::size_t uniform_index(Rng& rng, std::size_t count) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(count)) % count;
}

}  // namespace ngd

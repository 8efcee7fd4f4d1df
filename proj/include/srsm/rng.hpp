#pragma once

#include <cstdint>
#include <random>

namespace srsm {

// splitmix64 finalizer; used to derive independent seeds from one master seed.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// All randomness in a run descends from one master seed through this, so that
// subsystems (PPO, learner, per-trajectory simulation streams) stay
// reproducible and independent of each other.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::uint64_t index = 0) {
  return mix64(mix64(master ^ (stream * 0xd1b54a32d192ed03ULL)) ^ index);
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::uint64_t stream,
                                std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(master, stream, index));
}

// Stream tags for derive_seed.
enum : std::uint64_t {
  kStreamInit = 1,
  kStreamPpo = 2,
  kStreamLearner = 3,
  kStreamSimulate = 4,
  kStreamTest = 99,
};

}  // namespace srsm

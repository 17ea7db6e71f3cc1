#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sacfl {

// Counter-based seed derivation. Every randomized component of a run draws
// from its own engine, seeded by (master seed, purpose tag, indices...), so
// adding clients or rounds never perturbs the streams of existing ones.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(master);
  for (std::uint64_t p : path) {
    s = splitmix64(s ^ splitmix64(p));
  }
  return s;
}

inline std::mt19937_64 make_engine(std::uint64_t master,
                                   std::initializer_list<std::uint64_t> path) {
  return std::mt19937_64(derive_seed(master, path));
}

// Purpose tags for seed derivation paths.
namespace seed_tag {
inline constexpr std::uint64_t kData = 0x01;
inline constexpr std::uint64_t kModelInit = 0x02;
inline constexpr std::uint64_t kShuffle = 0x03;
inline constexpr std::uint64_t kDecoderReinit = 0x04;
inline constexpr std::uint64_t kProbe = 0x05;
inline constexpr std::uint64_t kCalibration = 0x06;
inline constexpr std::uint64_t kAttack = 0x07;
inline constexpr std::uint64_t kProxy = 0x08;
inline constexpr std::uint64_t kParticipation = 0x09;
}  // namespace seed_tag

}  // namespace sacfl

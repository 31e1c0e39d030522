#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace optibfm {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_keys(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b + 0x632be59bd9b4e019ULL));
  h = splitmix64(h ^ (c + 0x85157af5ULL));
  return h;
}

// Uniform in [0, 1) with 53 random bits.
inline double unit_uniform(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Seeds an independent mt19937_64 stream for (seed, stream id).
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  return Rng(mix_keys(seed, stream, 0xa5a5));
}

/// Counter-based environment randomness. Every draw is a pure function of
/// (seed, episode, step), which lets an agent rollout and its Oracle replay
/// consume identical initial-state, transition and noise draws.
class EnvStream {
 public:
  explicit EnvStream(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  double initial_uniform(std::int64_t episode) const {
    return unit_uniform(mix_keys(seed_, kInitial, static_cast<std::uint64_t>(episode)));
  }

  double transition_uniform(std::int64_t episode, std::int64_t step) const {
    return unit_uniform(mix_keys(seed_, kTransition, static_cast<std::uint64_t>(episode),
                                 static_cast<std::uint64_t>(step)));
  }

  // Box-Muller on two counter uniforms.
  double noise_normal(std::int64_t episode, std::int64_t step) const {
    const double u1 = 1.0 - unit_uniform(mix_keys(seed_, kNoiseA, static_cast<std::uint64_t>(episode),
                                                  static_cast<std::uint64_t>(step)));
    const double u2 = unit_uniform(mix_keys(seed_, kNoiseB, static_cast<std::uint64_t>(episode),
                                           static_cast<std::uint64_t>(step)));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static constexpr std::uint64_t kInitial = 1;
  static constexpr std::uint64_t kTransition = 2;
  static constexpr std::uint64_t kNoiseA = 3;
  static constexpr std::uint64_t kNoiseB = 4;
  std::uint64_t seed_;
};

}  // namespace optibfm

#pragma once

#include <cstdint>

namespace swarmpipe {

/// splitmix64 generator. Portable and bit-identical across platforms, which
/// is what weight initialisation, sampling and the simulator rely on.
class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  constexpr double uniform() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  constexpr bool bernoulli(double p) noexcept { return uniform() < p; }

  // Stream derived from a base seed and up to two keys.
  static constexpr SplitMix64 keyed(std::uint64_t seed, std::uint64_t key1,
                                    std::uint64_t key2 = 0) noexcept {
    SplitMix64 mix(seed);
    std::uint64_t s = mix.next();
    SplitMix64 k1(s ^ (key1 * 0xd6e8feb86659fd93ULL));
    s = k1.next();
    SplitMix64 k2(s ^ (key2 * 0xa0761d6478bd642fULL));
    return SplitMix64(k2.next());
  }

 private:
  std::uint64_t state_;
};

}  // namespace swarmpipe

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace ptqrel {

// SplitMix64 (Steele, Lea & Flood, 2014). The state advances by the 64-bit
// golden-ratio increment and each output passes through the variant-13
// finalizer below. std:: distributions are avoided everywhere because their
// output is implementation-defined; the helpers here are fully specified.
class SplitMix64 {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kMul1 = 0xBF58476D1CE4E5B9ULL;
  static constexpr std::uint64_t kMul2 = 0x94D049BB133111EBULL;

  explicit constexpr SplitMix64(std::uint64_t state) noexcept : state_(state) {}

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * kMul1;
    z = (z ^ (z >> 27)) * kMul2;
    return z ^ (z >> 31);
  }

  constexpr std::uint64_t next() noexcept {
    state_ += kGamma;
    return mix(state_);
  }

  // [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, bound) by Lemire's multiply-and-reject.
  __extension__ typedef unsigned __int128 u128;

  std::uint64_t below(std::uint64_t bound) noexcept {
    u128 m = static_cast<u128>(next()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        m = static_cast<u128>(next()) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Box-Muller; one fresh pair per call, the sine branch is discarded.
  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

// FNV-1a over the tag bytes; gives each consumer of randomness a fixed,
// documented 64-bit purpose tag.
constexpr std::uint64_t purpose_tag(std::string_view name) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Independent stream for (seed, purpose): state = mix(seed XOR tag).
inline SplitMix64 make_stream(std::uint64_t seed, std::string_view purpose) noexcept {
  return SplitMix64(SplitMix64::mix(seed ^ purpose_tag(purpose)));
}

// Stream keyed by an additional index (e.g. sample or epoch number), so work
// can be sharded without sharing generator state.
inline SplitMix64 make_stream(std::uint64_t seed, std::string_view purpose,
                              std::uint64_t index) noexcept {
  const std::uint64_t base = SplitMix64::mix(seed ^ purpose_tag(purpose));
  return SplitMix64(SplitMix64::mix(base + (index + 1) * SplitMix64::kGamma));
}

}  // namespace ptqrel

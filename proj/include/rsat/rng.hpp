#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace rsat {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Stream tags keep RNG streams of unrelated operations disjoint under one seed.
enum class StreamTag : std::uint64_t {
  subaverage = 1,
  permutation = 2,
  bootstrap = 3,
  synth_rdm = 4,
  synth_trials = 5,
  synth_noise = 6,
  synth_searchlight = 7,
  generic = 8,
};

/// Counter-based generator (splitmix64). A stream is fully determined by the
/// seed and the key ids it was derived with, so work items can be handed their
/// own independent stream regardless of scheduling order.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(detail::mix64(seed + detail::kGolden)) {}

  Rng(std::uint64_t seed, StreamTag tag, std::uint64_t a = 0, std::uint64_t b = 0,
      std::uint64_t c = 0, std::uint64_t d = 0)
      : state_(derive(seed, static_cast<std::uint64_t>(tag), a, b, c, d)) {}

  std::uint64_t next() {
    state_ += detail::kGolden;
    return detail::mix64(state_);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound); bound > 0.
  std::uint64_t uniform_int(std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = next();
    while (x >= limit) x = next();
    return x % bound;
  }

  /// Standard normal via Box-Muller (first of the pair; second discarded).
  double normal() {
    const double u1 = static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t tag, std::uint64_t a,
                              std::uint64_t b, std::uint64_t c, std::uint64_t d) {
    std::uint64_t h = detail::mix64(seed + detail::kGolden);
    h = detail::mix64(h ^ (tag + detail::kGolden));
    h = detail::mix64(h ^ (a + detail::kGolden));
    h = detail::mix64(h ^ (b + detail::kGolden));
    h = detail::mix64(h ^ (c + detail::kGolden));
    h = detail::mix64(h ^ (d + detail::kGolden));
    return h;
  }

  std::uint64_t state_;
};

}  // namespace rsat

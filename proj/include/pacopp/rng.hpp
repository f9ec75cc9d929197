#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace pacopp {

namespace detail {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

}  // namespace detail

/// Counter-based random stream.
///
/// Draw i of a stream is a pure function of (key, i), so a stream's output
/// depends only on its seed and on how many values were taken from it.
/// Child streams are keyed by hashing the parent key with an index and never
/// touch the parent's counter; trial t of an experiment uses
/// `Rng::for_trial(master_seed, t)` regardless of which worker runs it.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) noexcept : key_(detail::mix64(seed ^ 0x5DEECE66DULL)) {}

  static Rng for_trial(std::uint64_t master_seed, std::uint64_t trial_index) noexcept {
    return Rng(master_seed).child(trial_index);
  }

  /// Independent stream derived from this stream's key.
  [[nodiscard]] Rng child(std::uint64_t index) const noexcept {
    Rng out;
    out.key_ = detail::mix64(key_ ^ detail::mix64(index + detail::kGolden));
    out.key_ = detail::mix64(out.key_ + 0xD1B54A32D192ED03ULL);
    return out;
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept { return next_u64(); }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t c = counter_++;
    return detail::mix64(key_ + (c + 1) * detail::kGolden);
  }

  /// Uniform on [0, 1).
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0, 1).
  double uniform_open() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal() noexcept {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  [[nodiscard]] std::uint64_t draws() const noexcept { return counter_; }

 private:
  Rng() = default;

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace pacopp

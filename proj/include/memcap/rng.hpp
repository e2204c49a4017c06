#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace memcap {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Derive an independent seed for a named sub-stream.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
  return mix64(mix64(seed) ^ mix64(salt + 0x9E3779B97F4A7C15ULL));
}

/// Counter-based random stream. Draw i is a pure function of (seed, i), so
/// the whole state is two integers and a stream can be serialized or
/// replayed from any position. Normal draw i reads uniform slots 2i and
/// 2i+1, so a given stream should serve one kind of draw only.
class CounterRng {
 public:
  CounterRng() = default;
  explicit CounterRng(std::uint64_t seed, std::uint64_t counter = 0) noexcept
      : seed_(seed), key_(mix64(seed)), counter_(counter) {}

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }
  void set_counter(std::uint64_t c) noexcept { counter_ = c; }

  /// Raw 64 bits at an absolute position, without advancing.
  [[nodiscard]] std::uint64_t bits_at(std::uint64_t index) const noexcept {
    return mix64(key_ + (index + 1) * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform in (0, 1].
  [[nodiscard]] double uniform_at(std::uint64_t index) const noexcept {
    return (static_cast<double>(bits_at(index) >> 11) + 1.0) * 0x1.0p-53;
  }

  /// Standard normal at an absolute position (Box-Muller; consumes the
  /// uniform slots 2i and 2i+1).
  [[nodiscard]] double normal_at(std::uint64_t index) const noexcept {
    const double u1 = uniform_at(2 * index);
    const double u2 = uniform_at(2 * index + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t next_bits() noexcept { return bits_at(counter_++); }
  double uniform() noexcept { return uniform_at(counter_++); }
  double normal() noexcept { return normal_at(counter_++); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift; bias is < 2^-64 * n and irrelevant here.
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_bits()) * n) >> 64);
  }

  /// Reserve `count` consecutive positions and return the first one.
  std::uint64_t reserve(std::uint64_t count) noexcept {
    const auto base = counter_;
    counter_ += count;
    return base;
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t key_ = mix64(0);
  std::uint64_t counter_ = 0;
};

}  // namespace memcap

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace neurovol {

/// SplitMix64 finalizer.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Derives a child seed from a parent seed and a stream index:
/// splitmix64(parent ^ splitmix64(index + 0x9E3779B97F4A7C15)).
/// Used for per-patient, per-image, per-epoch and per-layer seeds.
std::uint64_t mix_seed(std::uint64_t parent, std::uint64_t index) noexcept;

/// Counter-based random stream. Draw k of a stream with seed s is
/// splitmix64(s + (k + 1) * golden_gamma), so values depend only on (seed, draw
/// index) and never on the platform's standard library distributions.
class RngStream {
 public:
  static constexpr std::string_view kAlgorithm = "splitmix64-counter";

  explicit RngStream(std::uint64_t seed = 0, std::uint64_t counter = 0) noexcept
      : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal() noexcept;
  double normal(double mean, double sd) noexcept { return mean + sd * normal(); }
  /// Uniform integer in [0, n), unbiased (rejection sampling). n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Independent child stream; does not advance this stream.
  RngStream fork(std::uint64_t stream_index) const noexcept {
    return RngStream(mix_seed(seed_, stream_index));
  }

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

}  // namespace neurovol

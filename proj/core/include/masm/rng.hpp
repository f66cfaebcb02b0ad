#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>

namespace masm {

// SplitMix64 finalizer; also used to derive stream seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

// Counter-based generator: draw i is mix64(seed + i * golden). The full state
// is (seed, counter), which makes checkpointing and replay trivial.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed, std::uint64_t counter = 0) noexcept
      : seed_(seed), counter_(counter) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() noexcept { return next_u64(); }

  std::uint64_t next_u64() noexcept;
  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller; consumes exactly two draws.
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }
  // Uniform integer in [0, n), n > 0.
  std::size_t index(std::size_t n) noexcept;

  // Independent generator keyed by (seed, stream); does not advance this one.
  Rng fork(std::uint64_t stream) const noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  bool operator==(const Rng&) const = default;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

// Fisher-Yates shuffle driven by Rng (std::shuffle is not portable across
// standard libraries).
template <typename T>
void shuffle(std::span<T> values, Rng& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    std::size_t j = rng.index(i);
    std::swap(values[i - 1], values[j]);
  }
}

}  // namespace masm

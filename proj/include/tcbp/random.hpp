#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace tcbp {

// xoshiro256** (Blackman & Vigna), seeded through splitmix64. The output
// sequence and every range mapping below are fixed so that anything derived
// from a seed (sketch hashes, initial weights, synthetic data) is identical on
// every platform. Bump kRngVersion if any of this ever changes.
inline constexpr std::uint32_t kRngVersion = 1;

std::uint64_t splitmix64(std::uint64_t& state);

// Independent seed for a named sub-stream of `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform over {0, ..., bound-1}; Lemire's multiply-shift with rejection.
  std::uint64_t uniform_index(std::uint64_t bound);

  // Uniform over [0, 1) with 53 random bits.
  double uniform01();

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller; consumes two draws per call.
  double normal();

  // +1 or -1 with equal probability (top bit of one draw).
  int sign();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::array<std::uint64_t, 4> state_{};
};

}  // namespace tcbp

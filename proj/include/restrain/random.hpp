#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace restrain {

// Stable 64-bit hash of a string (FNV-1a); std::hash is not portable across runs.
std::uint64_t stable_hash(std::string_view text);

// SplitMix64 finalizer, used to derive independent substream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// mt19937_64 with a platform-independent uniform draw.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Index drawn from unnormalized non-negative weights by inverse CDF.
  int categorical(std::span<const double> weights);

  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace restrain

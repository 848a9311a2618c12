#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace movesel {

// Counter-based 64-bit generator. Draw i (counting from 1) of a stream with
// key k is
//
//   z  = k + i * 0x9E3779B97F4A7C15
//   z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   out = z ^ (z >> 31)
//
// i.e. SplitMix64 with the seed as the initial state. A child stream derived
// from label L has key mix(k ^ fnv1a64(L)) and restarts its counter at 0.
// Only integer arithmetic is involved, so the raw u64 sequence is identical on
// every platform; real-valued draws go through the formulas below.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : key_(seed) {}

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;

  // (next_u64() >> 11) * 2^-53, in [0, 1).
  double uniform() noexcept;
  // Same lattice shifted by half a step, in (0, 1).
  double uniform_open() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Box-Muller, one output per two uniforms (no caching).
  double normal() noexcept;
  // Uniform integer in [0, n), by rejection; n must be > 0.
  std::size_t index(std::size_t n) noexcept;

  // Independent stream keyed by (this stream's key, label). Does not advance
  // the parent.
  Rng derive(std::string_view label) const noexcept;
  Rng derive(std::uint64_t label) const noexcept;

  static std::uint64_t mix(std::uint64_t z) noexcept;

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace movesel

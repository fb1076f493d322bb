#pragma once

#include <cstdint>

namespace fan {

/// Deterministic xoshiro256** generator seeded through splitmix64.
///
/// Owned by the caller and passed explicitly to every op that needs
/// randomness, so a fixed seed reproduces training runs bit for bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0x5eed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  /// Normal(0, stddev) resampled until it lies within two stddevs.
  double truncated_normal(double stddev);

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fan

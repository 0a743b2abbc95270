#pragma once

#include <array>
#include <cstdint>

namespace taca {

inline constexpr std::uint64_t kDefaultSeed = 42;

/// xoshiro256** generator seeded through splitmix64.
///
/// Normal variates use a local Box-Muller transform instead of
/// std::normal_distribution, whose algorithm is implementation-defined. The
/// integer stream is identical everywhere for a given seed; normals depend
/// only on the host libm's log/sin/cos.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = kDefaultSeed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

  /// Independent generator for a numbered sub-stream; does not advance *this.
  Rng fork(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace taca

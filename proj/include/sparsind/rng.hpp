#pragma once

#include <array>
#include <cstdint>

#include "sparsind/tensor.hpp"

namespace sparsind {

/// xoshiro256** seeded through SplitMix64. The integer stream is fully
/// specified, so a seed yields the same bits on every platform. Real-valued
/// draws are derived from it with fixed formulas (53-bit mantissa uniforms,
/// Box-Muller normals).
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  double normal();

  Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev = 1.0);
  Vector normal_vector(std::size_t len, double stddev = 1.0);
  Matrix uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi);
  Vector uniform_vector(std::size_t len, double lo, double hi);

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sparsind

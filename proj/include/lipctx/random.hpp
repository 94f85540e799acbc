// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include "lipctx/linalg.hpp"

namespace lipctx {

/// Portable pseudo-random source. The transforms to uniform/normal variates
/// are written out here (rather than using <random> distributions) so a seed
/// yields the same stream on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [lo, hi].
  std::size_t integer(std::size_t lo, std::size_t hi);

  /// Independent child stream; children of the same parent seed with
  /// distinct `stream` values never share state.
  static Rng split(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
};

Vector random_normal_vector(Rng& rng, std::size_t dim);
/// Uniform sample from the Euclidean ball.
Vector sample_in_ball(Rng& rng, const Vector& center, double radius);

}  // namespace lipctx

// SPDX-License-Identifier: Apache-2.0
#include "lipctx/random.hpp"

#include <cmath>
#include <numbers>

namespace lipctx {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

double Rng::uniform() {
  // 53 random mantissa bits.
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  // Box-Muller; the second variate is discarded to keep the stream stateless.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::integer(std::size_t lo, std::size_t hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return lo + static_cast<std::size_t>(engine_());
  // Rejection sampling against modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t r = engine_();
  while (r >= limit) r = engine_();
  return lo + static_cast<std::size_t>(r % span);
}

Rng Rng::split(std::uint64_t seed, std::uint64_t stream) {
  return Rng(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL)));
}

Vector random_normal_vector(Rng& rng, std::size_t dim) {
  Vector v(dim);
  for (std::size_t i = 0; i < dim; ++i) v[i] = rng.normal();
  return v;
}

Vector sample_in_ball(Rng& rng, const Vector& center, double radius) {
  const std::size_t dim = static_cast<std::size_t>(center.size());
  Vector dir = random_normal_vector(rng, dim);
  double n = norm2(dir);
  while (n == 0.0) {
    dir = random_normal_vector(rng, dim);
    n = norm2(dir);
  }
  const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(dim));
  return center + (r / n) * dir;
}

}  // namespace lipctx

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "lipctx/layers.hpp"
#include "lipctx/measure.hpp"
#include "lipctx/transformer.hpp"

namespace lipctx {

/// Context-free network z -> readout^T F_L(...F_1(A_q z + b_q)). With
/// ||A_q|| <= 1, clamped layers and ||readout|| <= 1 it is 1-Lipschitz.
struct Critic {
  Lifting lifting;
  std::vector<MlpLayer> stack;
  Vector readout;

  std::size_t input_dim() const { return lifting.in_dim(); }
  std::size_t width() const { return lifting.out_dim(); }
};

/// Partial derivatives laid out like Critic.
struct GradientSet {
  Matrix lift_A;
  Vector lift_b;
  std::vector<Matrix> W;
  std::vector<Vector> b;
  std::vector<double> tau;
  Vector readout;
};

struct TrainConfig {
  std::size_t iterations = 1000;
  double step_size = 0.05;
  std::uint64_t seed = 0;
  std::size_t width = 8;
  std::size_t depth = 1;
};

struct TrainResult {
  Critic critic;
  double estimate = 0.0;
  /// Objective of every iterate, starting with the initialization.
  std::vector<double> trace;
};

struct KrGap {
  double estimate;
  double exact;
  double gap;
};

double critic_value(const Critic& c, const Vector& z);
/// sum_i w_i c(x_i) - sum_j w'_j c(y_j).
double kr_objective(const Critic& c, const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);
GradientSet critic_grads(const Critic& c, const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);
/// Readout into the unit ball, lifting scaled by 1 / max(1, ||A_q||), taus clamped.
Critic project_params(const Critic& c);
/// Seeded random feasible critic.
Critic init_critic(std::size_t dim, std::size_t width, std::size_t depth, std::uint64_t seed);
/// Projected gradient ascent on kr_objective; returns the best iterate.
TrainResult train_critic(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, const TrainConfig& cfg);
/// Closed-form separable critic sum_k v_k psi_k(u_k . z) over an orthonormal
/// frame u, with psi_k linear, a V or a nested V kinked at projected atoms.
/// Frames are built around the mean difference, atom-pair differences and
/// coordinate axes.
TrainResult fold_critic(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);
KrGap kr_gap(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, const TrainConfig& cfg);

}  // namespace lipctx

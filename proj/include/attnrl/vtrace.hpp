// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Truncated importance sampling, V-trace targets and the actor-critic loss.

#pragma once

#include <cstdint>
#include <vector>

#include "attnrl/tensor.hpp"

namespace attnrl::vtrace {

// Step t: x_t, a_t, r_t. dones[t] marks that the episode ended with step t,
// so nothing after it is bootstrapped into step t.
struct Trajectory {
  Tensor behaviour_logits;  // [T x A]
  Tensor target_logits;     // [T x A]; may require grad
  std::vector<std::size_t> actions;
  std::vector<double> rewards;
  std::vector<std::uint8_t> dones;
  Tensor values;            // [T] V(s_t); may require grad
  double bootstrap = 0.0;   // V(s_T)

  std::size_t length() const { return actions.size(); }
};

struct IsWeights {
  std::vector<double> rho;
  std::vector<double> c;
};

struct VTraceOutput {
  std::vector<double> vs;
  std::vector<double> pg_advantages;
};

struct Losses {
  Tensor pg;
  Tensor baseline;
  Tensor entropy;
  Tensor total;
};

struct LossCoefficients {
  double baseline = 0.5;
  double entropy = 0.01;
};

void check_trajectory(const Trajectory& traj);

// pi(a_t|x_t) / b(a_t|x_t) truncated at rho_bar and c_bar.
IsWeights truncated_is_weights(const Trajectory& traj, double rho_bar, double c_bar);

// Remark-1 backward recursion.
VTraceOutput vtrace_targets(const Trajectory& traj, double gamma, const std::vector<double>& rho,
                            const std::vector<double>& c);

// Targets and advantages are constants; gradients reach target_logits and
// values only through the log-policy, entropy and baseline terms.
Losses actor_critic_losses(const VTraceOutput& out, const Trajectory& traj,
                           const LossCoefficients& coef = {});

}  // namespace attnrl::vtrace

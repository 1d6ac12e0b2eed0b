// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "attnrl/vtrace.hpp"

#include <algorithm>
#include <cmath>

namespace attnrl::vtrace {

namespace {

std::vector<double> log_prob_taken(const Tensor& logits, const std::vector<std::size_t>& actions) {
  NoGradGuard guard;
  const Tensor lp = gather_columns(log_softmax(logits, 1), actions);
  return {lp.values().begin(), lp.values().end()};
}

}  // namespace

void check_trajectory(const Trajectory& traj) {
  const std::size_t t = traj.length();
  if (!traj.behaviour_logits.defined() || !traj.target_logits.defined() || !traj.values.defined() ||
      traj.behaviour_logits.rank() != 2 || traj.behaviour_logits.dim(0) != t ||
      traj.target_logits.shape() != traj.behaviour_logits.shape() || traj.rewards.size() != t ||
      traj.dones.size() != t || traj.values.shape() != Shape{t}) {
    throw DimensionError("vtrace: trajectory fields disagree on length " + std::to_string(t));
  }
  const std::size_t a = traj.behaviour_logits.dim(1);
  for (std::size_t k : traj.actions)
    if (k >= a) throw DimensionError("vtrace: action " + std::to_string(k) + " outside [0, " + std::to_string(a) + ")");
}

IsWeights truncated_is_weights(const Trajectory& traj, double rho_bar, double c_bar) {
  if (!(c_bar > 0.0) || rho_bar < c_bar) {
    throw ContractError("vtrace: truncation levels need rho_bar >= c_bar > 0");
  }
  check_trajectory(traj);
  const auto target = log_prob_taken(traj.target_logits, traj.actions);
  const auto behaviour = log_prob_taken(traj.behaviour_logits, traj.actions);
  IsWeights w;
  w.rho.resize(target.size());
  w.c.resize(target.size());
  for (std::size_t t = 0; t < target.size(); ++t) {
    const double ratio = std::exp(target[t] - behaviour[t]);
    w.rho[t] = std::min(rho_bar, ratio);
    w.c[t] = std::min(c_bar, ratio);
  }
  return w;
}

VTraceOutput vtrace_targets(const Trajectory& traj, double gamma, const std::vector<double>& rho,
                            const std::vector<double>& c) {
  const std::size_t n = traj.length();
  if (rho.size() != n || c.size() != n || traj.rewards.size() != n || traj.dones.size() != n ||
      !traj.values.defined() || traj.values.numel() != n) {
    throw DimensionError("vtrace_targets: length mismatch");
  }
  auto v = traj.values.values();
  VTraceOutput out;
  out.vs.assign(n, 0.0);
  out.pg_advantages.assign(n, 0.0);
  double next_v = traj.bootstrap;      // v_{t+1}
  double next_value = traj.bootstrap;  // V(s_{t+1})
  for (std::size_t i = n; i-- > 0;) {
    const double discount = traj.dones[i] ? 0.0 : gamma;
    const double delta = rho[i] * (traj.rewards[i] + discount * next_value - v[i]);
    out.vs[i] = v[i] + delta + discount * c[i] * (next_v - next_value);
    out.pg_advantages[i] = rho[i] * (traj.rewards[i] + discount * next_v - v[i]);
    next_v = out.vs[i];
    next_value = v[i];
  }
  return out;
}

Losses actor_critic_losses(const VTraceOutput& out, const Trajectory& traj, const LossCoefficients& coef) {
  check_trajectory(traj);
  const std::size_t n = traj.length();
  if (out.vs.size() != n || out.pg_advantages.size() != n) {
    throw DimensionError("actor_critic_losses: targets do not match the trajectory");
  }
  const Tensor targets = Tensor(Shape{n}, out.vs).detach();
  const Tensor advantages = Tensor(Shape{n}, out.pg_advantages).detach();
  Losses l;
  const Tensor err = sub(targets, traj.values);
  l.baseline = scale(sum(mul(err, err)), 0.5);
  const Tensor log_pi = log_softmax(traj.target_logits, 1);
  l.pg = scale(sum(mul(gather_columns(log_pi, traj.actions), advantages)), -1.0);
  l.entropy = sum(mul(softmax(traj.target_logits, 1), log_pi));
  l.total = add(add(l.pg, scale(l.baseline, coef.baseline)), scale(l.entropy, coef.entropy));
  return l;
}

}  // namespace attnrl::vtrace

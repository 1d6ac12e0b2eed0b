// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Brute-force V-trace references shared by the unit and acceptance suites.

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "attnrl/vtrace.hpp"

namespace attnrl::testing {

// v_s = V(x_s) + sum_t (prod_{i<t} gamma_i c_i) delta_t, evaluated term by term.
inline std::vector<double> vtrace_summation(const vtrace::Trajectory& traj, double gamma,
                                            const std::vector<double>& rho, const std::vector<double>& c) {
  const std::size_t n = traj.length();
  auto v = traj.values.values();
  auto value_at = [&](std::size_t t) { return t < n ? v[t] : traj.bootstrap; };
  std::vector<double> out(n);
  for (std::size_t s = 0; s < n; ++s) {
    double total = value_at(s);
    for (std::size_t t = s; t < n; ++t) {
      double weight = 1.0;
      for (std::size_t i = s; i < t; ++i) weight *= (traj.dones[i] ? 0.0 : gamma) * c[i];
      const double g = traj.dones[t] ? 0.0 : gamma;
      total += weight * rho[t] * (traj.rewards[t] + g * value_at(t + 1) - value_at(t));
    }
    out[s] = total;
  }
  return out;
}

// On-policy n-step Bellman target: discounted rewards to the end, then the bootstrap.
inline std::vector<double> n_step_targets(const vtrace::Trajectory& traj, double gamma) {
  const std::size_t n = traj.length();
  std::vector<double> out(n);
  for (std::size_t s = 0; s < n; ++s) {
    double total = 0.0, discount = 1.0;
    bool ended = false;
    for (std::size_t t = s; t < n; ++t) {
      total += discount * traj.rewards[t];
      if (traj.dones[t]) {
        ended = true;
        break;
      }
      discount *= gamma;
    }
    if (!ended) total += discount * traj.bootstrap;
    out[s] = total;
  }
  return out;
}

inline vtrace::Trajectory random_trajectory(std::mt19937_64& rng, std::size_t n, std::size_t actions,
                                            bool on_policy) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::uniform_int_distribution<std::size_t> pick(0, actions - 1);
  std::bernoulli_distribution done(0.2);
  vtrace::Trajectory tr;
  std::vector<double> b(n * actions), p(n * actions), v(n);
  for (auto& x : b) x = u(rng);
  for (auto& x : p) x = u(rng);
  if (on_policy) p = b;
  for (auto& x : v) x = u(rng);
  tr.behaviour_logits = Tensor({n, actions}, b);
  tr.target_logits = Tensor({n, actions}, p);
  tr.values = Tensor({n}, v);
  for (std::size_t t = 0; t < n; ++t) {
    tr.actions.push_back(pick(rng));
    tr.rewards.push_back(u(rng));
    tr.dones.push_back(done(rng) ? 1 : 0);
  }
  tr.bootstrap = u(rng);
  return tr;
}

}  // namespace attnrl::testing

// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "attnrl/layers.hpp"
#include "attnrl/vtrace.hpp"
#include "../support/gradcheck.hpp"
#include "../support/vtrace_oracle.hpp"

using namespace attnrl;
using namespace attnrl::vtrace;
using attnrl::testing::check_gradients;
using attnrl::testing::random_trajectory;

namespace {

double softmax_prob(const Tensor& logits, std::size_t row, std::size_t action) {
  const std::size_t a = logits.dim(1);
  double z = 0.0;
  for (std::size_t j = 0; j < a; ++j) z += std::exp(logits[row * a + j]);
  return std::exp(logits[row * a + action]) / z;
}

}  // namespace

TEST_CASE("IS weights: on-policy ratios are one") {
  Rng rng(1);
  auto tr = random_trajectory(rng, 6, 4, true);
  auto w = truncated_is_weights(tr, 1.5, 0.7);
  for (std::size_t t = 0; t < 6; ++t) {
    CHECK(std::abs(w.rho[t] - 1.0) <= 1e-15);
    CHECK(w.c[t] == 0.7);
  }
}

TEST_CASE("IS weights: a ratio of five is clipped to rho_bar") {
  Trajectory tr;
  // pi(0) = 5/6 against b(0) = 1/6.
  tr.behaviour_logits = Tensor({1, 2}, {0.0, std::log(5.0)});
  tr.target_logits = Tensor({1, 2}, {std::log(5.0), 0.0});
  tr.actions = {0};
  tr.rewards = {0};
  tr.dones = {0};
  tr.values = Tensor({1}, 0.0);
  auto w = truncated_is_weights(tr, 1.0, 1.0);
  CHECK(w.rho[0] == 1.0);
  auto loose = truncated_is_weights(tr, 100.0, 1.0);
  CHECK(std::abs(loose.rho[0] - 5.0) <= 1e-12);
}

TEST_CASE("IS weights: random logits match a direct softmax ratio") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto tr = random_trajectory(rng, 5, 3, false);
    auto w = truncated_is_weights(tr, 1e9, 1e9);
    for (std::size_t t = 0; t < 5; ++t) {
      const double ratio = softmax_prob(tr.target_logits, t, tr.actions[t]) /
                           softmax_prob(tr.behaviour_logits, t, tr.actions[t]);
      CHECK(std::abs(w.rho[t] - ratio) <= 1e-12 * std::max(1.0, ratio));
    }
  }
  auto tr = random_trajectory(rng, 2, 3, false);
  CHECK_THROWS_AS(truncated_is_weights(tr, 0.5, 1.0), ContractError);
}

TEST_CASE("IS weights: raising rho_bar never lowers a weight") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto tr = random_trajectory(rng, 6, 3, false);
    auto lo = truncated_is_weights(tr, 0.8, 0.5);
    auto hi = truncated_is_weights(tr, 1.3, 0.5);
    for (std::size_t t = 0; t < 6; ++t) {
      CHECK(hi.rho[t] >= lo.rho[t]);
      CHECK(lo.rho[t] <= 0.8);
      CHECK(lo.c[t] <= 0.5);
    }
  }
}

TEST_CASE("vtrace: on-policy targets equal n-step Bellman targets") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    auto tr = random_trajectory(rng, 1 + trial % 8, 3, true);
    auto w = truncated_is_weights(tr, 1.0, 1.0);
    auto out = vtrace_targets(tr, 0.9, w.rho, w.c);
    auto ref = attnrl::testing::n_step_targets(tr, 0.9);
    for (std::size_t t = 0; t < tr.length(); ++t) CHECK(std::abs(out.vs[t] - ref[t]) <= 1e-12);
  }
}

TEST_CASE("vtrace: zero rewards and zero values give zero targets") {
  Rng rng(5);
  auto tr = random_trajectory(rng, 6, 3, false);
  tr.rewards.assign(6, 0.0);
  tr.values = Tensor({6}, 0.0);
  tr.bootstrap = 0.0;
  auto w = truncated_is_weights(tr, 1.0, 1.0);
  auto out = vtrace_targets(tr, 0.99, w.rho, w.c);
  for (double v : out.vs) CHECK(v == 0.0);
}

TEST_CASE("vtrace: recursion matches the explicit summation form") {
  Rng rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    auto tr = random_trajectory(rng, 1 + trial % 8, 4, false);
    auto w = truncated_is_weights(tr, 1.2, 0.9);
    auto out = vtrace_targets(tr, 0.95, w.rho, w.c);
    auto ref = attnrl::testing::vtrace_summation(tr, 0.95, w.rho, w.c);
    for (std::size_t t = 0; t < tr.length(); ++t) CHECK(std::abs(out.vs[t] - ref[t]) <= 1e-12);
  }
  auto tr = random_trajectory(rng, 3, 2, false);
  CHECK_THROWS_AS(vtrace_targets(tr, 0.9, {1.0}, {1.0}), DimensionError);
}

TEST_CASE("vtrace: rewards after a done flag never reach earlier targets") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto tr = random_trajectory(rng, 8, 3, false);
    tr.dones.assign(8, 0);
    const std::size_t cut = 1 + static_cast<std::size_t>(trial) % 6;
    tr.dones[cut] = 1;
    auto w = truncated_is_weights(tr, 1.0, 1.0);
    auto base = vtrace_targets(tr, 0.99, w.rho, w.c);
    auto changed = tr;
    for (std::size_t t = cut + 1; t < 8; ++t) changed.rewards[t] += 10.0;
    changed.bootstrap += 3.0;
    auto pert = vtrace_targets(changed, 0.99, w.rho, w.c);
    for (std::size_t t = 0; t <= cut; ++t) CHECK(base.vs[t] == pert.vs[t]);
  }
}

TEST_CASE("losses: uniform policy has entropy term -log A per step") {
  Rng rng(8);
  auto tr = random_trajectory(rng, 4, 5, false);
  tr.target_logits = Tensor({4, 5}, 0.3);
  auto w = truncated_is_weights(tr, 1.0, 1.0);
  auto out = vtrace_targets(tr, 0.99, w.rho, w.c);
  auto l = actor_critic_losses(out, tr);
  CHECK(std::abs(l.entropy.item() - 4 * -std::log(5.0)) <= 1e-12);
}

TEST_CASE("losses: zero advantages give zero policy loss and zero policy gradient") {
  Rng rng(9);
  auto tr = random_trajectory(rng, 5, 3, false);
  tr.target_logits.set_requires_grad();
  VTraceOutput out{std::vector<double>(5, 0.5), std::vector<double>(5, 0.0)};
  auto l = actor_critic_losses(out, tr);
  CHECK(l.pg.item() == 0.0);
  backward(l.pg);
  if (tr.target_logits.has_grad())
    for (double g : tr.target_logits.grad()) CHECK(g == 0.0);
}

TEST_CASE("losses: gradient of the total matches finite differences with constant targets") {
  Rng rng(10);
  auto tr = random_trajectory(rng, 6, 3, false);
  tr.target_logits.set_requires_grad();
  tr.values.set_requires_grad();
  auto w = truncated_is_weights(tr, 1.0, 1.0);
  const auto out = vtrace_targets(tr, 0.99, w.rho, w.c);  // frozen: perturbations do not move it
  auto r = check_gradients([&] { return actor_critic_losses(out, tr).total; },
                           {{"target_logits", tr.target_logits}, {"values", tr.values}});
  CHECK(r.max_rel_error <= 1e-5);

  // The baseline term alone: gradient is exactly -(v_k - V(s_k)) * coef.
  tr.values.zero_grad();
  Graph::current().reset();
  backward(actor_critic_losses(out, tr, {1.0, 0.0}).baseline);
  for (std::size_t t = 0; t < 6; ++t) CHECK(std::abs(tr.values.grad()[t] + (out.vs[t] - tr.values[t])) <= 1e-12);
}

// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference oracle. It only ever calls the forward function
// and reads leaf values, so it stays independent of every backward rule.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "attnrl/tensor.hpp"

namespace attnrl::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_leaf;
};

inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-10});
  return std::sqrt(diff) / denom;
}

inline std::vector<double> numeric_gradient(const std::function<double()>& loss, Tensor leaf,
                                            double step = 1e-6) {
  auto values = leaf.mutable_values();
  std::vector<double> out(values.size());
  NoGradGuard guard;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double up = loss();
    values[i] = saved - step;
    const double down = loss();
    values[i] = saved;
    out[i] = (up - down) / (2.0 * step);
  }
  return out;
}

// loss() must rebuild the scalar from the leaves on every call.
inline GradCheckResult check_gradients(const std::function<Tensor()>& loss,
                                       std::vector<std::pair<std::string, Tensor>> leaves,
                                       double step = 1e-6) {
  for (auto& [name, leaf] : leaves) leaf.zero_grad();
  Graph::current().reset();
  Tensor value = loss();
  backward(value);
  GradCheckResult result;
  auto scalar = [&] { return loss().item(); };
  for (auto& [name, leaf] : leaves) {
    std::vector<double> analytic(leaf.numel(), 0.0);
    if (leaf.has_grad()) analytic.assign(leaf.grad().begin(), leaf.grad().end());
    const auto numeric = numeric_gradient(scalar, leaf, step);
    const double err = relative_error(analytic, numeric);
    if (err > result.max_rel_error || result.worst_leaf.empty()) {
      result.max_rel_error = std::max(result.max_rel_error, err);
      result.worst_leaf = name;
    }
  }
  return result;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  Tensor t(std::move(shape), std::move(v));
  if (grad) t.set_requires_grad(true);
  return t;
}

}  // namespace attnrl::testing

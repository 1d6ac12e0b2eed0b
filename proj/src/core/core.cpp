// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include "attnrl/core.hpp"

namespace attnrl {

void check_core_input(const CoreInput& in, const CoreSpec& spec) {
  const std::size_t t = in.steps();
  const Shape frame{t, spec.in_channels, spec.height, spec.width};
  if (!in.frames.defined() || in.frames.shape() != frame) {
    throw DimensionError("core: frames " + (in.frames.defined() ? shape_str(in.frames.shape()) : "<none>") +
                         ", expected " + shape_str(frame));
  }
  if (in.prev_reward.size() != t || !in.prev_logits.defined() ||
      in.prev_logits.shape() != Shape{t, spec.num_actions}) {
    throw DimensionError("core: prev_reward/prev_logits do not match " + std::to_string(t) + " steps");
  }
  if (!in.resets.empty() && in.resets.size() != t) {
    throw DimensionError("core: " + std::to_string(in.resets.size()) + " reset flags for " +
                         std::to_string(t) + " steps");
  }
}

void copy_parameters(const PolicyCore& src, PolicyCore& dst) {
  const ParamList from = src.parameters();
  ParamList to = dst.parameters();
  if (from.size() != to.size()) throw ContractError("copy_parameters: architectures differ");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].tensor.shape() != to[i].tensor.shape()) {
      throw DimensionError("copy_parameters: " + from[i].name + " " + shape_str(from[i].tensor.shape()) +
                           " vs " + shape_str(to[i].tensor.shape()));
    }
    auto v = from[i].tensor.values();
    std::copy(v.begin(), v.end(), to[i].tensor.mutable_values().begin());
  }
}

}  // namespace attnrl

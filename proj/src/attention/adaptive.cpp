// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "attnrl/adaptive.hpp"

namespace attnrl {

AdaptiveCore::AdaptiveCore(const CoreSpec& spec) : spec_(spec) {
  Rng rng(spec.seed);
  vision = VisionNet::init(spec.in_channels, spec.vision_widths, rng);
  const Shape out = vision.output_shape(spec.height, spec.width);
  shrink = Linear::init(shape_numel(out), spec.shrink, rng);
  embed = Linear::init(spec.shrink + 1 + spec.num_actions, spec.d_model, rng);
  txl = TxlStack::init(spec.d_model, spec.heads, spec.n_layer, spec.mem_len, spec.max_pos, rng);
  policy = Linear::init(spec.d_model, spec.num_actions, rng);
  value = Linear::init(spec.d_model, 1, rng);
}

ParamList AdaptiveCore::parameters() const {
  ParamList out;
  vision.collect("vision", out);
  shrink.collect("shrink", out);
  embed.collect("embed", out);
  txl.collect("txl", out);
  policy.collect("policy", out);
  value.collect("value", out);
  return out;
}

Tensor AdaptiveCore::encode(const Tensor& frames) const {
  const Tensor features = vision_forward(vision, frames);
  const std::size_t t = frames.dim(0);
  return relu(linear_forward(shrink, reshape(features, {t, features.numel() / t})));
}

AdaptiveForward adaptive_core_forward(const AdaptiveCore& core, const Tensor& encoded_obs,
                                      const Tensor& prev_reward, const Tensor& prev_logits,
                                      const TxlMemory& state, const std::vector<std::uint8_t>& resets,
                                      AttentionRecord* record) {
  const std::size_t t = encoded_obs.dim(0);
  const std::size_t a = core.spec().num_actions;
  if (encoded_obs.rank() != 2 || prev_reward.shape() != Shape{t} || prev_logits.shape() != Shape{t, a}) {
    throw DimensionError("adaptive: encoded " + shape_str(encoded_obs.shape()) + ", reward " +
                         shape_str(prev_reward.shape()) + ", logits " + shape_str(prev_logits.shape()));
  }
  const Tensor tokens = concat({encoded_obs, reshape(prev_reward, {t, 1}), prev_logits}, 1);
  TxlResult r = txl_segment_forward(core.txl, linear_forward(core.embed, tokens), state, resets, record);
  AdaptiveForward out;
  out.policy_logits = linear_forward(core.policy, r.output);
  out.baseline = reshape(linear_forward(core.value, r.output), {t});
  out.memory = std::move(r.memory);
  return out;
}

CoreOutput AdaptiveCore::unroll(const CoreInput& in, AgentState& state, bool record) const {
  check_core_input(in, spec_);
  auto& memory = std::get<TxlMemory>(state);
  CoreOutput out;
  const Tensor reward(Shape{in.steps()}, in.prev_reward);
  auto f = adaptive_core_forward(*this, encode(in.frames), reward, in.prev_logits, memory, in.resets,
                                 record ? &out.records : nullptr);
  out.policy_logits = std::move(f.policy_logits);
  out.baseline = std::move(f.baseline);
  memory = std::move(f.memory);
  return out;
}

}  // namespace attnrl

// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Adaptive core: residual vision encoder, shrink layer, Transformer-XL over
// [obs, prev reward, prev logits] tokens, linear policy and value heads.

#pragma once

#include "attnrl/core.hpp"

namespace attnrl {

class AdaptiveCore : public PolicyCore {
 public:
  explicit AdaptiveCore(const CoreSpec& spec);

  const CoreSpec& spec() const override { return spec_; }
  AgentState initial_state() const override { return TxlMemory{}; }
  CoreOutput unroll(const CoreInput& in, AgentState& state, bool record = false) const override;
  ParamList parameters() const override;

  // frames [T x C x H x W] -> [T x shrink]
  Tensor encode(const Tensor& frames) const;

  VisionNet vision;
  Linear shrink;
  Linear embed;  // [shrink + 1 + A] -> d_model
  TxlStack txl;
  Linear policy;
  Linear value;

 private:
  CoreSpec spec_;
};

struct AdaptiveForward {
  Tensor policy_logits;  // [T x A]
  Tensor baseline;       // [T]
  TxlMemory memory;
};

// encoded_obs [T x shrink], prev_reward [T], prev_logits [T x A].
AdaptiveForward adaptive_core_forward(const AdaptiveCore& core, const Tensor& encoded_obs,
                                      const Tensor& prev_reward, const Tensor& prev_logits,
                                      const TxlMemory& state,
                                      const std::vector<std::uint8_t>& resets = {},
                                      AttentionRecord* record = nullptr);

}  // namespace attnrl

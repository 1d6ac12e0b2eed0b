// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "attnrl/adaptive.hpp"
#include "attnrl/mott.hpp"
#include "attnrl/timesformer.hpp"

namespace attnrl {

std::unique_ptr<PolicyCore> make_core(const CoreSpec& spec) {
  if (spec.arch == "adaptive") return std::make_unique<AdaptiveCore>(spec);
  if (spec.arch == "mott") return std::make_unique<MottCore>(spec);
  if (spec.arch == "sp-temp-seq")
    return std::make_unique<SpatioTemporalCore>(spec, SpatioTemporalCore::QuerySource::sequential);
  if (spec.arch == "sp-temp-oneshot")
    return std::make_unique<SpatioTemporalCore>(spec, SpatioTemporalCore::QuerySource::actor_cached);
  if (spec.arch == "divided") return std::make_unique<TimeSformerCore>(spec, SpaceTimeBlock::Scheme::divided);
  if (spec.arch == "joint") return std::make_unique<TimeSformerCore>(spec, SpaceTimeBlock::Scheme::joint);
  throw ContractError("unknown architecture '" + spec.arch + "'");
}

}  // namespace attnrl

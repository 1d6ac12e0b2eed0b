// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Space-time transformer core. Every frame becomes N patch tokens; blocks
// attend over space and time (divided: time, then space; joint: both at
// once). Past frames are served from a detached per-layer cache, and one
// output is drawn per frame.

#pragma once

#include "attnrl/attention.hpp"
#include "attnrl/core.hpp"

namespace attnrl {

struct PatchEmbedder {
  enum class Mode { plain, hybrid };
  Mode mode = Mode::hybrid;
  std::size_t patch = 7;
  Tensor kernel, bias;  // plain: [emb x C x P x P] convolution, stride P
  VisionNet vision;     // hybrid: every feature-map cell is one 1x1 patch
  Linear project;       // hybrid: channels -> emb
  Tensor positions;     // [N x emb], trainable, Gaussian init
  std::size_t grid_h = 0, grid_w = 0;

  static PatchEmbedder init(const CoreSpec& spec, Rng& rng);
  std::size_t tokens() const { return grid_h * grid_w; }
  std::size_t width() const { return positions.dim(1); }
  void collect(const std::string& prefix, ParamList& out) const;
};

// [C x H x W] -> [N x emb], or [T x C x H x W] -> [T x N x emb]. Spatial
// encodings are added; temporal ones are added by the core.
Tensor patch_embed(const PatchEmbedder& embedder, const Tensor& frames);

// Tally of query-key scores actually evaluated (masked keys excluded).
struct ComparisonCounter {
  std::uint64_t temporal = 0;
  std::uint64_t spatial = 0;
  std::uint64_t joint = 0;
  std::uint64_t total() const { return temporal + spatial + joint; }
  void reset() { *this = {}; }
};

struct SpaceTimeBlock {
  enum class Scheme { divided, joint };
  Scheme scheme = Scheme::divided;
  // Joint: the only attention. Divided: the spatial attention. Carries the
  // MLP sub-block either way.
  EncoderBlock base;
  // Divided only.
  MultiHeadAttention time;
  Tensor ln_time_gain, ln_time_bias;

  static SpaceTimeBlock init(Scheme scheme, std::size_t d_model, std::size_t heads, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// x [T x N x d] are the frames of a chunk, memory [M x N x d] the cached past
// frames (undefined when empty). frame_mask is [T x (M + T)]: nonzero when
// query frame i may see key frame j.
Tensor space_time_block_forward(const SpaceTimeBlock& block, const Tensor& x, const Tensor& memory,
                                const Mask& frame_mask, ComparisonCounter* counter = nullptr,
                                const RecordTarget& target = {});

// One frame tokens_now [N x d] against F - 1 cached frames [F-1 x N x d].
Tensor joint_attention(const SpaceTimeBlock& block, const Tensor& tokens_now, const Tensor& cache,
                       ComparisonCounter* counter = nullptr);
Tensor divided_attention(const SpaceTimeBlock& block, const Tensor& tokens_now, const Tensor& cache,
                         ComparisonCounter* counter = nullptr);

class TimeSformerCore : public PolicyCore {
 public:
  TimeSformerCore(const CoreSpec& spec, SpaceTimeBlock::Scheme scheme);

  const CoreSpec& spec() const override { return spec_; }
  AgentState initial_state() const override { return FrameCache{}; }
  CoreOutput unroll(const CoreInput& in, AgentState& state, bool record = false) const override;
  ParamList parameters() const override;
  SpaceTimeBlock::Scheme scheme() const { return scheme_; }

  PatchEmbedder embedder;
  Tensor time_positions;  // [max_pos x emb], trainable, Gaussian init
  std::vector<SpaceTimeBlock> blocks;
  Linear shrink;  // N * emb -> shrink
  Linear policy;  // [shrink, r, logits] -> A
  Linear value;

 private:
  CoreSpec spec_;
  SpaceTimeBlock::Scheme scheme_;
};

struct TimeSformerForward {
  Tensor policy_logits;  // [T x A]
  Tensor baseline;       // [T]
  FrameCache cache;
};

TimeSformerForward timesformer_core_forward(const TimeSformerCore& core, const Tensor& frames,
                                            const Tensor& prev_reward, const Tensor& prev_logits,
                                            const FrameCache& cache, const std::vector<std::uint8_t>& resets = {},
                                            AttentionRecord* record = nullptr, ComparisonCounter* counter = nullptr);

}  // namespace attnrl

// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Common interface of the policy cores driven by the actor-learner pipeline.

#pragma once

#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "attnrl/attention.hpp"

namespace attnrl {

struct LstmState {
  Tensor h;  // [hidden], also the previous core output fed to the query network
  Tensor c;  // [hidden]
};

struct SpatioTemporalState {
  TxlMemory memory;
  Tensor prev_output;  // [d_model]; query seed of the next step
};

// Detached token grids of past frames, one entry per layer.
struct FrameCache {
  std::vector<Tensor> layers;          // per layer [F x N x d]
  std::vector<std::int64_t> episode;   // episode tag per cached frame
  std::int64_t episode_id = 0;
  std::size_t next_position = 0;
  std::size_t frames() const { return episode.size(); }
};

using AgentState = std::variant<LstmState, TxlMemory, SpatioTemporalState, FrameCache>;

// Architecture-independent sizes. Fields that an architecture does not use
// are ignored.
struct CoreSpec {
  std::string arch = "adaptive";
  std::size_t in_channels = 4;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t num_actions = 3;
  std::vector<std::size_t> vision_widths{8, 16};
  std::size_t shrink = 64;      // width of the flattened-frame projection
  std::size_t d_model = 32;     // transformer width
  std::size_t heads = 4;
  std::size_t n_layer = 1;
  std::size_t mem_len = 100;
  std::size_t max_pos = 512;
  // Mott
  std::size_t basis_u = 4;
  std::size_t basis_v = 4;
  std::size_t key_channels = 0;  // 0: half of the vision channels
  std::size_t answer_hidden = 128;
  std::size_t lstm_hidden = 64;
  // TimeSformer
  std::size_t emb_size = 16;
  std::size_t patch_size = 7;
  bool hybrid = true;
  std::uint64_t seed = 0;
};

struct CoreInput {
  Tensor frames;                     // [T x C x H x W]
  std::vector<double> prev_reward;   // [T]
  Tensor prev_logits;                // [T x A]
  std::vector<std::uint8_t> resets;  // [T]; nonzero: row starts a new episode
  Tensor query_seeds;                // [T x seed width]; one-shot cores only

  std::size_t steps() const { return frames.defined() ? frames.dim(0) : 0; }
};

struct CoreOutput {
  Tensor policy_logits;  // [T x A]
  Tensor baseline;       // [T]
  Tensor query_seeds;    // [T x seed width]; seeds consumed per step, detached
  AttentionRecord records;
  std::vector<Tensor> spatial_maps;  // per step [H x h x w] for spatial-attention cores
};

class PolicyCore {
 public:
  virtual ~PolicyCore() = default;

  virtual const CoreSpec& spec() const = 0;
  virtual AgentState initial_state() const = 0;
  // Learner path: a whole chunk. The returned state is detached.
  virtual CoreOutput unroll(const CoreInput& in, AgentState& state, bool record = false) const = 0;
  // Actor path: a single step under NoGrad; one-shot cores produce their own
  // query seed here and report it in CoreOutput::query_seeds.
  virtual CoreOutput act(const CoreInput& in, AgentState& state, bool record = false) const {
    return unroll(in, state, record);
  }
  virtual ParamList parameters() const = 0;
  virtual bool needs_query_seeds() const { return false; }
  virtual std::size_t query_seed_width() const { return 0; }
};

// Builds the core named by spec.arch: mott, adaptive, sp-temp-seq,
// sp-temp-oneshot, divided or joint.
std::unique_ptr<PolicyCore> make_core(const CoreSpec& spec);

// Copies values of every parameter of src into dst (same architecture).
void copy_parameters(const PolicyCore& src, PolicyCore& dst);

// Shared input checks.
void check_core_input(const CoreInput& in, const CoreSpec& spec);

}  // namespace attnrl

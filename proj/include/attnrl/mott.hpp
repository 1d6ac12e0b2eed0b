// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Spatial attention in the style of Mott et al.: a frozen Fourier spatial
// basis is appended to vision keys and values, H query vectors attend over
// space, and the answers feed either an LSTM (MottCore) or a Transformer-XL
// (SpatioTemporalCore).

#pragma once

#include "attnrl/core.hpp"

namespace attnrl {

// [h x w x (U+V)^2]. Per axis the 1-D functions are cos(pi*u*i/n) for
// u = 0..U-1 followed by sin(pi*v*i/n) for v = 1..V; channel a*(U+V)+b is
// the outer product of function a along rows and function b along columns.
Tensor build_spatial_basis(std::size_t h, std::size_t w, std::size_t u, std::size_t v);

// keys [h x w x L], queries [H x L] -> maps [H x h x w], softmax over space.
// No 1/sqrt(L) scaling.
Tensor spatial_attention(const Tensor& keys, const Tensor& queries);

// maps [H x h x w], values [h x w x Lv] -> answers [H x Lv].
Tensor answer_vectors(const Tensor& maps, const Tensor& values);

// Shared front end: vision, key/value split, spatial basis, query network.
struct SpatialFrontEnd {
  VisionNet vision;
  Mlp query_mlp;  // seed -> H * (c_K + c_S)
  Tensor basis;   // [h x w x c_S], frozen
  std::size_t heads = 0;
  std::size_t key_channels = 0;
  std::size_t value_channels = 0;
  std::size_t map_h = 0, map_w = 0;

  static SpatialFrontEnd init(const CoreSpec& spec, std::size_t seed_width, Rng& rng);
  std::size_t basis_channels() const { return basis.dim(2); }
  std::size_t query_width() const { return key_channels + basis_channels(); }
  std::size_t answer_width() const { return value_channels + basis_channels(); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct KeysValues {
  Tensor keys;    // [T x hw x (c_K + c_S)]
  Tensor values;  // [T x hw x (c_V + c_S)]
};

// frames [T x C x H x W].
KeysValues spatial_keys_values(const SpatialFrontEnd& fe, const Tensor& frames);

struct SpatialReadout {
  Tensor queries;  // [T x H x L]
  Tensor maps;     // [T x H x hw]
  Tensor answers;  // [T x H x Lv]
};

// seeds [T x seed width].
SpatialReadout spatial_readout(const SpatialFrontEnd& fe, const KeysValues& kv, const Tensor& seeds);

class MottCore : public PolicyCore {
 public:
  explicit MottCore(const CoreSpec& spec);

  const CoreSpec& spec() const override { return spec_; }
  AgentState initial_state() const override;
  CoreOutput unroll(const CoreInput& in, AgentState& state, bool record = false) const override;
  ParamList parameters() const override;

  SpatialFrontEnd front;
  Mlp answer_mlp;  // [answers, queries, r, logits] -> answer_hidden, two layers
  LstmCell lstm;
  Linear policy;
  Linear value;

 private:
  CoreSpec spec_;
};

struct MottStep {
  Tensor policy_logits;  // [A]
  Tensor baseline;       // scalar [1]
  LstmState state;
  Tensor maps;           // [H x h x w]
};

// One step on a single frame [C x H x W]. The state's h seeds the queries.
MottStep mott_step(const MottCore& core, const Tensor& frame, double prev_reward, const Tensor& prev_logits,
                   const LstmState& state);

class SpatioTemporalCore : public PolicyCore {
 public:
  enum class QuerySource { sequential, actor_cached };

  SpatioTemporalCore(const CoreSpec& spec, QuerySource source);

  const CoreSpec& spec() const override { return spec_; }
  AgentState initial_state() const override;
  CoreOutput unroll(const CoreInput& in, AgentState& state, bool record = false) const override;
  CoreOutput act(const CoreInput& in, AgentState& state, bool record = false) const override;
  ParamList parameters() const override;
  bool needs_query_seeds() const override { return source_ == QuerySource::actor_cached; }
  std::size_t query_seed_width() const override { return spec_.d_model; }
  QuerySource source() const { return source_; }

  SpatialFrontEnd front;
  Linear embed;  // [answers, queries, r, logits] -> d_model
  TxlStack txl;
  Linear policy;
  Linear value;

 private:
  CoreOutput unroll_cached(const CoreInput& in, SpatioTemporalState& state, bool record) const;
  CoreOutput unroll_sequential(const CoreInput& in, SpatioTemporalState& state, bool record) const;

  CoreSpec spec_;
  QuerySource source_;
};

}  // namespace attnrl

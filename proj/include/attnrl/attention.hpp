// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scaled dot-product and multi-head attention, pre-LN encoder blocks and
// Transformer-XL segment recurrence.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attnrl/layers.hpp"

namespace attnrl {

// Row-major [q x k] (or [batch x q x k]); nonzero = key visible. Empty = all visible.
using Mask = std::vector<std::uint8_t>;

inline constexpr double kMaskedLogit = -1e30;

struct AttentionMap {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t group = 0;  // batch element for batched attention
  std::string row_axis;  // e.g. "query_step"
  std::string col_axis;  // e.g. "key_step"
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> probs;  // rows x cols
};

struct AttentionRecord {
  std::vector<AttentionMap> maps;
};

struct SdpaResult {
  Tensor y;  // [Nq x d_v] or [B x Nq x d_v]
  Tensor a;  // [Nq x Nk] or [B x Nq x Nk]
};

// A = softmax(Q K^T / sqrt(d_k)) with masked logits replaced before the
// softmax; Y = A V. Rank-3 inputs are independent batches sharing the mask
// when it has q*k entries. A row with no visible key is a ContractError.
SdpaResult sdpa(const Tensor& Q, const Tensor& K, const Tensor& V, const Mask& mask = {});

// (i, j) visible iff j <= i + (k_len - q_len).
Mask causal_mask(std::size_t q_len, std::size_t k_len);

struct MultiHeadAttention {
  Tensor W_q, W_k, W_v, W_o;  // [d_model x d_model]
  std::size_t heads = 1;

  static MultiHeadAttention init(std::size_t d_model, std::size_t heads, Rng& rng);
  std::size_t d_model() const { return W_q.dim(0); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct RecordTarget {
  AttentionRecord* record = nullptr;
  std::size_t layer = 0;
  std::string row_axis = "query";
  std::string col_axis = "key";
  std::size_t group = 0;  // added to the batch index of every captured map
};

// x_q [Lq x d], x_kv [Lk x d]. Heads are column slices of the projections,
// concatenated in order before W_o.
Tensor mha_forward(const MultiHeadAttention& mha, const Tensor& x_q, const Tensor& x_kv,
                   const Mask& mask = {}, const RecordTarget& target = {});

// Same, for B independent sequences: x_q [B x Lq x d], x_kv [B x Lk x d].
Tensor mha_forward_batched(const MultiHeadAttention& mha, const Tensor& x_q, const Tensor& x_kv,
                           const Mask& mask = {}, const RecordTarget& target = {});

struct EncoderBlock {
  MultiHeadAttention mha;
  Linear fc1, fc2;  // GELU between
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;

  static EncoderBlock init(std::size_t d_model, std::size_t heads, std::size_t d_inner, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
  // Zeroes every weight; the block becomes the identity map.
  void zero_weights();
};

inline constexpr double kBlockLayerNormEps = 1e-5;

// Pre-LN block. memory [M x d] (may be undefined) extends keys and values;
// mask is [L x (M + L)].
Tensor encoder_block_forward(const EncoderBlock& block, const Tensor& x, const Tensor& memory,
                             const Mask& mask, const RecordTarget& target = {});

// Position-wise MLP sub-layer with its residual: x + fc2(gelu(fc1(LN2(x)))).
Tensor encoder_mlp_forward(const EncoderBlock& block, const Tensor& x);

struct TxlMemory {
  std::vector<Tensor> layers;          // per layer [m x d], detached
  std::vector<std::int64_t> episode;   // episode tag per cached row
  std::int64_t episode_id = 0;         // tag of the most recent token
  std::size_t next_position = 0;       // in-episode index of the next token
  std::size_t size() const { return episode.size(); }
};

struct TxlStack {
  std::vector<EncoderBlock> blocks;
  Tensor positions;  // trainable [max_pos x d], sinusoidal at init
  std::size_t mem_len = 100;

  static TxlStack init(std::size_t d_model, std::size_t heads, std::size_t n_layer,
                       std::size_t mem_len, std::size_t max_pos, Rng& rng);
  std::size_t d_model() const { return positions.dim(1); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct TxlResult {
  Tensor output;  // [L x d]
  TxlMemory memory;
};

// resets[t] != 0 starts a new episode at token t: earlier tokens become
// invisible and the in-episode position restarts at 0. Positions past the
// table are clamped to its last row.
// The returned memory is detached unless keep_graph is set; a caller that
// feeds segments one token at a time keeps the graph so gradients reach
// earlier tokens, and detaches at its own boundary.
TxlResult txl_segment_forward(const TxlStack& stack, const Tensor& segment, const TxlMemory& memory,
                              const std::vector<std::uint8_t>& resets = {},
                              AttentionRecord* record = nullptr, bool keep_graph = false);

TxlMemory detach_memory(const TxlMemory& memory);

}  // namespace attnrl

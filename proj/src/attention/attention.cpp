// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "attnrl/attention.hpp"

#include <algorithm>
#include <cmath>

namespace attnrl {

namespace {

// Expands a shared [q x k] mask to every batch element and rejects rows
// that would see nothing.
Mask expand_mask(const Mask& mask, std::size_t batch, std::size_t q, std::size_t k) {
  const std::size_t plane = q * k;
  Mask full;
  if (mask.size() == plane) {
    full.resize(batch * plane);
    for (std::size_t b = 0; b < batch; ++b) std::copy(mask.begin(), mask.end(), full.begin() + b * plane);
  } else if (mask.size() == batch * plane) {
    full = mask;
  } else {
    throw DimensionError("attention: mask of " + std::to_string(mask.size()) + " entries for " +
                         std::to_string(batch) + " x " + std::to_string(q) + " x " + std::to_string(k));
  }
  for (std::size_t r = 0; r < batch * q; ++r) {
    if (std::none_of(full.begin() + r * k, full.begin() + (r + 1) * k, [](auto v) { return v != 0; })) {
      throw ContractError("attention: query row " + std::to_string(r % q) + " has every key masked");
    }
  }
  return full;
}

void capture(const Tensor& probs, std::size_t heads, const RecordTarget& target) {
  if (target.record == nullptr) return;
  const std::size_t bh = probs.dim(0), q = probs.dim(1), k = probs.dim(2);
  auto v = probs.values();
  for (std::size_t i = 0; i < bh; ++i) {
    AttentionMap m;
    m.layer = target.layer;
    m.head = i % heads;
    m.group = target.group + i / heads;
    m.row_axis = target.row_axis;
    m.col_axis = target.col_axis;
    m.rows = q;
    m.cols = k;
    m.probs.assign(v.begin() + static_cast<std::ptrdiff_t>(i * q * k),
                   v.begin() + static_cast<std::ptrdiff_t>((i + 1) * q * k));
    target.record->maps.push_back(std::move(m));
  }
}

SdpaResult sdpa_batched(const Tensor& Q, const Tensor& K, const Tensor& V, const Mask& mask) {
  if (Q.rank() != 3 || K.rank() != 3 || V.rank() != 3 || Q.dim(0) != K.dim(0) ||
      K.dim(0) != V.dim(0) || Q.dim(2) != K.dim(2) || K.dim(1) != V.dim(1)) {
    throw DimensionError("sdpa: Q " + shape_str(Q.shape()) + ", K " + shape_str(K.shape()) + ", V " +
                         shape_str(V.shape()));
  }
  const std::size_t batch = Q.dim(0), nq = Q.dim(1), nk = K.dim(1);
  Tensor logits = scale(bmm_nt(Q, K), 1.0 / std::sqrt(static_cast<double>(Q.dim(2))));
  if (!mask.empty()) logits = masked_fill(logits, expand_mask(mask, batch, nq, nk), kMaskedLogit);
  Tensor a = softmax(logits, 2);
  Tensor y = bmm(a, V);
  return {std::move(y), std::move(a)};
}

// [B x L x d] -> [B*H x L x dk]
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t len, std::size_t heads) {
  const std::size_t dk = x.dim(x.rank() - 1) / heads;
  Tensor y = permute(reshape(x, {batch, len, heads, dk}), {0, 2, 1, 3});
  return reshape(y, {batch * heads, len, dk});
}

}  // namespace

SdpaResult sdpa(const Tensor& Q, const Tensor& K, const Tensor& V, const Mask& mask) {
  if (Q.rank() == 3) return sdpa_batched(Q, K, V, mask);
  if (Q.rank() != 2 || K.rank() != 2 || V.rank() != 2) {
    throw DimensionError("sdpa: Q " + shape_str(Q.shape()) + ", K " + shape_str(K.shape()) + ", V " +
                         shape_str(V.shape()));
  }
  auto r = sdpa_batched(reshape(Q, {1, Q.dim(0), Q.dim(1)}), reshape(K, {1, K.dim(0), K.dim(1)}),
                        reshape(V, {1, V.dim(0), V.dim(1)}), mask);
  return {reshape(r.y, {Q.dim(0), V.dim(1)}), reshape(r.a, {Q.dim(0), K.dim(0)})};
}

Mask causal_mask(std::size_t q_len, std::size_t k_len) {
  if (k_len < q_len) {
    throw DimensionError("causal_mask: k_len " + std::to_string(k_len) + " < q_len " +
                         std::to_string(q_len));
  }
  Mask m(q_len * k_len, 0);
  const std::size_t offset = k_len - q_len;
  for (std::size_t i = 0; i < q_len; ++i)
    for (std::size_t j = 0; j <= i + offset; ++j) m[i * k_len + j] = 1;
  return m;
}

// ---------------------------------------------------------------------------

MultiHeadAttention MultiHeadAttention::init(std::size_t d_model, std::size_t heads, Rng& rng) {
  if (heads == 0 || d_model % heads != 0) {
    throw DimensionError("mha: d_model " + std::to_string(d_model) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  MultiHeadAttention m;
  m.W_q = uniform_param({d_model, d_model}, d_model, rng);
  m.W_k = uniform_param({d_model, d_model}, d_model, rng);
  m.W_v = uniform_param({d_model, d_model}, d_model, rng);
  m.W_o = uniform_param({d_model, d_model}, d_model, rng);
  m.heads = heads;
  return m;
}

void MultiHeadAttention::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".W_q", W_q});
  out.push_back({prefix + ".W_k", W_k});
  out.push_back({prefix + ".W_v", W_v});
  out.push_back({prefix + ".W_o", W_o});
}

Tensor mha_forward_batched(const MultiHeadAttention& mha, const Tensor& x_q, const Tensor& x_kv,
                           const Mask& mask, const RecordTarget& target) {
  const std::size_t d = mha.d_model();
  if (x_q.rank() != 3 || x_kv.rank() != 3 || x_q.dim(2) != d || x_kv.dim(2) != d ||
      x_q.dim(0) != x_kv.dim(0)) {
    throw DimensionError("mha: x_q " + shape_str(x_q.shape()) + ", x_kv " + shape_str(x_kv.shape()) +
                         " for d_model " + std::to_string(d));
  }
  const std::size_t batch = x_q.dim(0), lq = x_q.dim(1), lk = x_kv.dim(1), h = mha.heads;
  const Tensor q2 = reshape(x_q, {batch * lq, d});
  const Tensor kv2 = reshape(x_kv, {batch * lk, d});
  const Tensor Q = split_heads(matmul_nt(q2, mha.W_q), batch, lq, h);
  const Tensor K = split_heads(matmul_nt(kv2, mha.W_k), batch, lk, h);
  const Tensor V = split_heads(matmul_nt(kv2, mha.W_v), batch, lk, h);
  Mask head_mask;
  if (!mask.empty() && mask.size() != lq * lk) {
    if (mask.size() != batch * lq * lk) {
      throw DimensionError("mha: mask of " + std::to_string(mask.size()) + " entries for " +
                           std::to_string(batch) + " x " + std::to_string(lq) + " x " +
                           std::to_string(lk));
    }
    head_mask.resize(batch * h * lq * lk);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < h; ++i)
        std::copy_n(mask.begin() + static_cast<std::ptrdiff_t>(b * lq * lk), lq * lk,
                    head_mask.begin() + static_cast<std::ptrdiff_t>((b * h + i) * lq * lk));
  }
  auto r = sdpa_batched(Q, K, V, head_mask.empty() ? mask : head_mask);
  capture(r.a, h, target);
  Tensor merged = reshape(permute(reshape(r.y, {batch, h, lq, d / h}), {0, 2, 1, 3}), {batch * lq, d});
  return reshape(matmul_nt(merged, mha.W_o), {batch, lq, d});
}

Tensor mha_forward(const MultiHeadAttention& mha, const Tensor& x_q, const Tensor& x_kv,
                   const Mask& mask, const RecordTarget& target) {
  if (x_q.rank() != 2 || x_kv.rank() != 2) {
    throw DimensionError("mha: x_q " + shape_str(x_q.shape()) + ", x_kv " + shape_str(x_kv.shape()));
  }
  Tensor y = mha_forward_batched(mha, reshape(x_q, {1, x_q.dim(0), x_q.dim(1)}),
                                 reshape(x_kv, {1, x_kv.dim(0), x_kv.dim(1)}), mask, target);
  return reshape(y, {x_q.dim(0), x_q.dim(1)});
}

// ---------------------------------------------------------------------------

EncoderBlock EncoderBlock::init(std::size_t d_model, std::size_t heads, std::size_t d_inner, Rng& rng) {
  EncoderBlock b;
  b.mha = MultiHeadAttention::init(d_model, heads, rng);
  b.fc1 = Linear::init(d_model, d_inner, rng);
  b.fc2 = Linear::init(d_inner, d_model, rng);
  b.ln1_gain = Tensor({d_model}, 1.0).set_requires_grad();
  b.ln1_bias = zeros_param({d_model});
  b.ln2_gain = Tensor({d_model}, 1.0).set_requires_grad();
  b.ln2_bias = zeros_param({d_model});
  return b;
}

void EncoderBlock::collect(const std::string& prefix, ParamList& out) const {
  mha.collect(prefix + ".mha", out);
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
  out.push_back({prefix + ".ln1.gain", ln1_gain});
  out.push_back({prefix + ".ln1.bias", ln1_bias});
  out.push_back({prefix + ".ln2.gain", ln2_gain});
  out.push_back({prefix + ".ln2.bias", ln2_bias});
}

void EncoderBlock::zero_weights() {
  for (Tensor* t : {&mha.W_q, &mha.W_k, &mha.W_v, &mha.W_o}) fill_zero(*t);
  fc1.zero();
  fc2.zero();
}

Tensor encoder_mlp_forward(const EncoderBlock& block, const Tensor& x) {
  const std::size_t axis = x.rank() - 1;
  Tensor h = layer_norm(x, block.ln2_gain, block.ln2_bias, axis, kBlockLayerNormEps);
  const Shape shape = x.shape();
  const std::size_t d = shape.back();
  h = reshape(h, {x.numel() / d, d});
  h = linear_forward(block.fc2, gelu(linear_forward(block.fc1, h)));
  return add(x, reshape(h, shape));
}

Tensor encoder_block_forward(const EncoderBlock& block, const Tensor& x, const Tensor& memory,
                             const Mask& mask, const RecordTarget& target) {
  const bool has_memory = memory.defined() && memory.numel() > 0;
  const std::size_t m = has_memory ? memory.dim(0) : 0;
  const Tensor all = has_memory ? concat({memory, x}, 0) : x;
  const Tensor normed = layer_norm(all, block.ln1_gain, block.ln1_bias, 1, kBlockLayerNormEps);
  const Tensor q = has_memory ? slice(normed, 0, m, x.dim(0)) : normed;
  const Tensor x1 = add(x, mha_forward(block.mha, q, normed, mask, target));
  return encoder_mlp_forward(block, x1);
}

// ---------------------------------------------------------------------------

TxlStack TxlStack::init(std::size_t d_model, std::size_t heads, std::size_t n_layer,
                        std::size_t mem_len, std::size_t max_pos, Rng& rng) {
  TxlStack s;
  for (std::size_t l = 0; l < n_layer; ++l) s.blocks.push_back(EncoderBlock::init(d_model, heads, 4 * d_model, rng));
  s.positions = sinusoidal_encoding(max_pos, d_model).set_requires_grad();
  s.mem_len = mem_len;
  return s;
}

void TxlStack::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect(prefix + ".layer" + std::to_string(l), out);
  out.push_back({prefix + ".positions", positions});
}

TxlResult txl_segment_forward(const TxlStack& stack, const Tensor& segment, const TxlMemory& memory,
                              const std::vector<std::uint8_t>& resets, AttentionRecord* record,
                              bool keep_graph) {
  const std::size_t d = stack.d_model();
  if (segment.rank() != 2 || segment.dim(1) != d) {
    throw DimensionError("txl: segment " + shape_str(segment.shape()) + " for d_model " +
                         std::to_string(d));
  }
  const std::size_t len = segment.dim(0);
  if (!resets.empty() && resets.size() != len) {
    throw DimensionError("txl: " + std::to_string(resets.size()) + " reset flags for " +
                         std::to_string(len) + " tokens");
  }
  const std::size_t n_layer = stack.blocks.size();
  if (memory.size() > 0) {
    if (memory.layers.size() != n_layer) throw DimensionError("txl: memory layer count mismatch");
    for (const auto& layer : memory.layers) {
      if (layer.rank() != 2 || layer.dim(1) != d || layer.dim(0) != memory.size()) {
        throw DimensionError("txl: memory " + shape_str(layer.shape()) + " for d_model " +
                             std::to_string(d));
      }
    }
  }

  std::vector<std::int64_t> tags(len);
  std::vector<std::size_t> pos(len);
  std::int64_t episode = memory.episode_id;
  std::size_t next = memory.next_position;
  const std::size_t max_pos = stack.positions.dim(0);
  for (std::size_t t = 0; t < len; ++t) {
    if (!resets.empty() && resets[t]) {
      ++episode;
      next = 0;
    }
    tags[t] = episode;
    pos[t] = std::min(next, max_pos - 1);
    ++next;
  }

  // Memory only ever holds one episode; skip it entirely when that episode
  // has already ended.
  const bool use_memory = memory.size() > 0 && len > 0 && memory.episode.back() == tags[0];
  const std::size_t m = use_memory ? memory.size() : 0;
  const std::size_t k = m + len;
  Mask mask(len * k, 0);
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = 0; j < m; ++j) mask[i * k + j] = memory.episode[j] == tags[i];
    for (std::size_t j = 0; j <= i; ++j) mask[i * k + m + j] = tags[j] == tags[i];
  }

  Tensor x = add(segment, index_rows(stack.positions, pos));
  std::vector<Tensor> inputs;
  inputs.reserve(n_layer);
  for (std::size_t l = 0; l < n_layer; ++l) {
    inputs.push_back(x);
    RecordTarget target{record, l, "query_step", "key_step"};
    x = encoder_block_forward(stack.blocks[l], x, use_memory ? memory.layers[l] : Tensor(), mask, target);
  }

  TxlResult result;
  result.output = x;
  TxlMemory& out = result.memory;
  out.episode_id = len > 0 ? tags.back() : memory.episode_id;
  out.next_position = next;
  // Rows of the final episode, newest mem_len of them.
  std::vector<std::pair<bool, std::size_t>> rows;  // (from memory, index)
  for (std::size_t j = 0; j < m; ++j)
    if (memory.episode[j] == out.episode_id) rows.emplace_back(true, j);
  for (std::size_t t = 0; t < len; ++t)
    if (tags[t] == out.episode_id) rows.emplace_back(false, t);
  if (len == 0 && memory.size() > 0) {
    for (std::size_t j = 0; j < memory.size(); ++j) rows.emplace_back(true, j);
  }
  const std::size_t keep = std::min(rows.size(), stack.mem_len);
  rows.erase(rows.begin(), rows.end() - static_cast<std::ptrdiff_t>(keep));
  for (const auto& [from_memory, idx] : rows) out.episode.push_back(from_memory ? memory.episode[idx] : tags[idx]);
  std::vector<std::size_t> from_memory_rows, from_segment_rows;
  for (const auto& [from_memory, idx] : rows) (from_memory ? from_memory_rows : from_segment_rows).push_back(idx);
  for (std::size_t l = 0; l < n_layer; ++l) {
    if (keep_graph) {
      std::vector<Tensor> parts;
      if (!from_memory_rows.empty()) parts.push_back(index_rows(memory.layers[l], from_memory_rows));
      if (!from_segment_rows.empty()) parts.push_back(index_rows(inputs[l], from_segment_rows));
      if (!parts.empty()) out.layers.push_back(parts.size() == 1 ? parts[0] : concat(parts, 0));
      continue;
    }
    std::vector<double> values(keep * d);
    for (std::size_t r = 0; r < keep; ++r) {
      const auto& [from_memory, idx] = rows[r];
      auto src = from_memory ? memory.layers[l].values() : inputs[l].values();
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx * d), d,
                  values.begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    Tensor cached({keep, d}, std::move(values));
    cached.impl()->detached = true;
    out.layers.push_back(std::move(cached));
  }
  if (keep == 0) {
    out.layers.clear();
    out.episode.clear();
  }
  return result;
}

TxlMemory detach_memory(const TxlMemory& memory) {
  TxlMemory out = memory;
  for (auto& layer : out.layers) layer = layer.detach();
  return out;
}

}  // namespace attnrl

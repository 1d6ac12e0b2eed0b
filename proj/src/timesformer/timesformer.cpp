// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "attnrl/timesformer.hpp"

#include <algorithm>

namespace attnrl {

namespace {

constexpr double kPositionSigma = 0.02;

}  // namespace

PatchEmbedder PatchEmbedder::init(const CoreSpec& spec, Rng& rng) {
  PatchEmbedder e;
  e.mode = spec.hybrid ? Mode::hybrid : Mode::plain;
  e.patch = spec.patch_size;
  const std::size_t emb = spec.emb_size;
  if (e.mode == Mode::plain) {
    const std::size_t p = spec.patch_size;
    if (p == 0 || spec.height % p != 0 || spec.width % p != 0) {
      throw DimensionError("patch embedding: frame " + std::to_string(spec.height) + "x" +
                           std::to_string(spec.width) + " is not divisible by patch size " + std::to_string(p));
    }
    e.grid_h = spec.height / p;
    e.grid_w = spec.width / p;
    e.kernel = uniform_param({emb, spec.in_channels, p, p}, spec.in_channels * p * p, rng);
    e.bias = zeros_param({emb});
  } else {
    e.vision = VisionNet::init(spec.in_channels, spec.vision_widths, rng);
    const Shape out = e.vision.output_shape(spec.height, spec.width);
    e.grid_h = out[1];
    e.grid_w = out[2];
    e.project = Linear::init(out[0], emb, rng);
  }
  e.positions = gaussian_encoding({e.tokens(), emb}, kPositionSigma, rng);
  return e;
}

void PatchEmbedder::collect(const std::string& prefix, ParamList& out) const {
  if (mode == Mode::plain) {
    out.push_back({prefix + ".kernel", kernel});
    out.push_back({prefix + ".bias", bias});
  } else {
    vision.collect(prefix + ".vision", out);
    project.collect(prefix + ".project", out);
  }
  out.push_back({prefix + ".positions", positions});
}

Tensor patch_embed(const PatchEmbedder& e, const Tensor& frames) {
  if (frames.rank() == 3) {
    const Tensor t = patch_embed(e, reshape(frames, {1, frames.dim(0), frames.dim(1), frames.dim(2)}));
    return reshape(t, {t.dim(1), t.dim(2)});
  }
  if (frames.rank() != 4) throw DimensionError("patch_embed: frames " + shape_str(frames.shape()));
  const std::size_t t = frames.dim(0), n = e.tokens(), emb = e.width();
  Tensor tokens;
  if (e.mode == PatchEmbedder::Mode::plain) {
    const std::size_t h = frames.dim(2), w = frames.dim(3);
    if (h % e.patch != 0 || w % e.patch != 0 || h / e.patch != e.grid_h || w / e.patch != e.grid_w) {
      throw DimensionError("patch_embed: frame " + std::to_string(h) + "x" + std::to_string(w) +
                           " does not split into " + std::to_string(e.grid_h) + "x" + std::to_string(e.grid_w) +
                           " patches of size " + std::to_string(e.patch));
    }
    const Tensor maps = conv2d(frames, e.kernel, e.bias, e.patch, 0);
    tokens = permute(reshape(maps, {t, emb, n}), {0, 2, 1});
  } else {
    const Tensor maps = vision_forward(e.vision, frames);
    if (maps.dim(2) * maps.dim(3) != n) throw DimensionError("patch_embed: feature map " + shape_str(maps.shape()));
    const std::size_t c = maps.dim(1);
    const Tensor cells = reshape(permute(reshape(maps, {t, c, n}), {0, 2, 1}), {t * n, c});
    tokens = linear_forward(e.project, cells);
  }
  tokens = add_row(reshape(tokens, {t, n * emb}), reshape(e.positions, {n * emb}));
  return reshape(tokens, {t, n, emb});
}

// ---- Blocks

SpaceTimeBlock SpaceTimeBlock::init(Scheme scheme, std::size_t d_model, std::size_t heads, Rng& rng) {
  SpaceTimeBlock b;
  b.scheme = scheme;
  b.base = EncoderBlock::init(d_model, heads, 4 * d_model, rng);
  if (scheme == Scheme::divided) {
    b.time = MultiHeadAttention::init(d_model, heads, rng);
    b.ln_time_gain = Tensor({d_model}, 1.0).set_requires_grad();
    b.ln_time_bias = zeros_param({d_model});
  }
  return b;
}

void SpaceTimeBlock::collect(const std::string& prefix, ParamList& out) const {
  if (scheme == Scheme::divided) {
    time.collect(prefix + ".time", out);
    out.push_back({prefix + ".ln_time.gain", ln_time_gain});
    out.push_back({prefix + ".ln_time.bias", ln_time_bias});
  }
  base.collect(prefix + (scheme == Scheme::divided ? ".space" : ".joint"), out);
}

Tensor space_time_block_forward(const SpaceTimeBlock& block, const Tensor& x, const Tensor& memory,
                                const Mask& frame_mask, ComparisonCounter* counter, const RecordTarget& target) {
  if (x.rank() != 3) throw DimensionError("space-time block: tokens " + shape_str(x.shape()));
  const std::size_t t = x.dim(0), n = x.dim(1), d = x.dim(2);
  const bool has_memory = memory.defined() && memory.numel() > 0;
  const std::size_t m = has_memory ? memory.dim(0) : 0;
  if (has_memory && (memory.rank() != 3 || memory.dim(1) != n || memory.dim(2) != d)) {
    throw DimensionError("space-time block: memory " + shape_str(memory.shape()) + " for tokens " +
                         shape_str(x.shape()));
  }
  const std::size_t k = m + t;
  if (frame_mask.size() != t * k) {
    throw DimensionError("space-time block: frame mask of " + std::to_string(frame_mask.size()) + " entries for " +
                         std::to_string(t) + " x " + std::to_string(k) + " frames");
  }
  std::vector<std::size_t> visible(t, 0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < k; ++j) visible[i] += frame_mask[i * k + j] != 0;

  const Tensor all = has_memory ? concat({memory, x}, 0) : x;

  if (block.scheme == SpaceTimeBlock::Scheme::joint) {
    const Tensor normed = layer_norm(all, block.base.ln1_gain, block.base.ln1_bias, 2, kBlockLayerNormEps);
    std::vector<Tensor> rows;
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<std::size_t> frames;
      for (std::size_t j = 0; j < k; ++j)
        if (frame_mask[i * k + j]) frames.push_back(j);
      const Tensor kv = reshape(index_rows(normed, frames), {frames.size() * n, d});
      const Tensor q = reshape(slice(normed, 0, m + i, 1), {n, d});
      RecordTarget tg = target;
      tg.row_axis = "query_patch";
      tg.col_axis = "key_token";
      tg.group = i;
      rows.push_back(mha_forward(block.base.mha, q, kv, {}, tg));
      if (counter) counter->joint += n * frames.size() * n;
    }
    const Tensor y = reshape(t == 1 ? rows[0] : concat(rows, 0), {t, n, d});
    return encoder_mlp_forward(block.base, add(x, y));
  }

  // Temporal stage: patch p attends to patch p of every visible frame.
  const Tensor normed_t = layer_norm(all, block.ln_time_gain, block.ln_time_bias, 2, kBlockLayerNormEps);
  const Tensor q = permute(has_memory ? slice(normed_t, 0, m, t) : normed_t, {1, 0, 2});
  const Tensor kv = permute(normed_t, {1, 0, 2});
  RecordTarget tt = target;
  tt.row_axis = "query_frame";
  tt.col_axis = "key_frame";
  const Tensor temporal = permute(mha_forward_batched(block.time, q, kv, frame_mask, tt), {1, 0, 2});
  const Tensor x1 = add(x, temporal);
  // Spatial stage within each frame.
  const Tensor normed_s = layer_norm(x1, block.base.ln1_gain, block.base.ln1_bias, 2, kBlockLayerNormEps);
  RecordTarget ts = target;
  ts.row_axis = "query_patch";
  ts.col_axis = "key_patch";
  const Tensor x2 = add(x1, mha_forward_batched(block.base.mha, normed_s, normed_s, {}, ts));
  if (counter) {
    for (std::size_t i = 0; i < t; ++i) counter->temporal += n * visible[i];
    counter->spatial += t * n * n;
  }
  return encoder_mlp_forward(block.base, x2);
}

namespace {

Tensor single_frame(const SpaceTimeBlock& block, const Tensor& tokens_now, const Tensor& cache,
                    ComparisonCounter* counter) {
  if (tokens_now.rank() != 2) throw DimensionError("space-time block: tokens " + shape_str(tokens_now.shape()));
  const std::size_t m = cache.defined() ? cache.dim(0) : 0;
  const Mask mask(m + 1, 1);
  const Tensor x = reshape(tokens_now, {1, tokens_now.dim(0), tokens_now.dim(1)});
  const Tensor y = space_time_block_forward(block, x, cache.defined() ? cache.detach() : cache, mask, counter);
  return reshape(y, tokens_now.shape());
}

}  // namespace

Tensor joint_attention(const SpaceTimeBlock& block, const Tensor& tokens_now, const Tensor& cache,
                       ComparisonCounter* counter) {
  if (block.scheme != SpaceTimeBlock::Scheme::joint) throw ContractError("joint_attention: block is divided");
  return single_frame(block, tokens_now, cache, counter);
}

Tensor divided_attention(const SpaceTimeBlock& block, const Tensor& tokens_now, const Tensor& cache,
                         ComparisonCounter* counter) {
  if (block.scheme != SpaceTimeBlock::Scheme::divided) throw ContractError("divided_attention: block is joint");
  return single_frame(block, tokens_now, cache, counter);
}

// ---- Core

TimeSformerCore::TimeSformerCore(const CoreSpec& spec, SpaceTimeBlock::Scheme scheme)
    : spec_(spec), scheme_(scheme) {
  Rng rng(spec.seed);
  embedder = PatchEmbedder::init(spec, rng);
  time_positions = gaussian_encoding({spec.max_pos, spec.emb_size}, kPositionSigma, rng);
  for (std::size_t l = 0; l < spec.n_layer; ++l)
    blocks.push_back(SpaceTimeBlock::init(scheme, spec.emb_size, spec.heads, rng));
  shrink = Linear::init(embedder.tokens() * spec.emb_size, spec.shrink, rng);
  policy = Linear::init(spec.shrink + 1 + spec.num_actions, spec.num_actions, rng);
  value = Linear::init(spec.shrink + 1 + spec.num_actions, 1, rng);
}

ParamList TimeSformerCore::parameters() const {
  ParamList out;
  embedder.collect("embed", out);
  out.push_back({"time_positions", time_positions});
  for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect("block" + std::to_string(l), out);
  shrink.collect("shrink", out);
  policy.collect("policy", out);
  value.collect("value", out);
  return out;
}

TimeSformerForward timesformer_core_forward(const TimeSformerCore& core, const Tensor& frames,
                                            const Tensor& prev_reward, const Tensor& prev_logits,
                                            const FrameCache& cache, const std::vector<std::uint8_t>& resets,
                                            AttentionRecord* record, ComparisonCounter* counter) {
  const std::size_t t = frames.dim(0);
  const std::size_t n = core.embedder.tokens();
  const std::size_t d = core.embedder.width();
  const std::size_t n_layer = core.blocks.size();
  if (!resets.empty() && resets.size() != t) {
    throw DimensionError("timesformer: " + std::to_string(resets.size()) + " reset flags for " + std::to_string(t) +
                         " frames");
  }
  if (cache.frames() > 0 && cache.layers.size() != n_layer) throw DimensionError("timesformer: cache layer count");

  // Episode tags and in-episode frame index per chunk frame.
  std::vector<std::int64_t> tags(t);
  std::vector<std::size_t> pos(t);
  std::int64_t episode = cache.episode_id;
  std::size_t next = cache.next_position;
  const std::size_t max_pos = core.time_positions.dim(0);
  for (std::size_t i = 0; i < t; ++i) {
    if (!resets.empty() && resets[i]) {
      ++episode;
      next = 0;
    }
    tags[i] = episode;
    pos[i] = std::min(next, max_pos - 1);
    ++next;
  }
  const bool use_cache = cache.frames() > 0 && t > 0 && cache.episode.back() == tags[0];
  const std::size_t m = use_cache ? cache.frames() : 0;
  const std::size_t k = m + t;
  Mask mask(t * k, 0);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < m; ++j) mask[i * k + j] = cache.episode[j] == tags[i];
    for (std::size_t j = 0; j <= i; ++j) mask[i * k + m + j] = tags[j] == tags[i];
  }

  std::vector<std::size_t> pos_per_token(t * n);
  for (std::size_t i = 0; i < t; ++i) std::fill_n(pos_per_token.begin() + static_cast<std::ptrdiff_t>(i * n), n, pos[i]);
  Tensor x = add(patch_embed(core.embedder, frames),
                 reshape(index_rows(core.time_positions, pos_per_token), {t, n, d}));
  std::vector<Tensor> inputs;
  for (std::size_t l = 0; l < n_layer; ++l) {
    inputs.push_back(x);
    x = space_time_block_forward(core.blocks[l], x, use_cache ? cache.layers[l] : Tensor(), mask, counter,
                                 RecordTarget{record, l});
  }

  const Tensor features = relu(linear_forward(core.shrink, reshape(x, {t, n * d})));
  const Tensor head_in = concat({features, reshape(prev_reward, {t, 1}), prev_logits}, 1);
  TimeSformerForward out;
  out.policy_logits = linear_forward(core.policy, head_in);
  out.baseline = reshape(linear_forward(core.value, head_in), {t});

  // New cache: newest mem_len frames of the final episode, detached.
  FrameCache& c = out.cache;
  c.episode_id = t > 0 ? tags.back() : cache.episode_id;
  c.next_position = next;
  std::vector<std::pair<bool, std::size_t>> rows;
  for (std::size_t j = 0; j < m; ++j)
    if (cache.episode[j] == c.episode_id) rows.emplace_back(true, j);
  for (std::size_t i = 0; i < t; ++i)
    if (tags[i] == c.episode_id) rows.emplace_back(false, i);
  const std::size_t keep = std::min(rows.size(), core.spec().mem_len);
  rows.erase(rows.begin(), rows.end() - static_cast<std::ptrdiff_t>(keep));
  if (keep == 0) return out;
  for (const auto& [from_cache, idx] : rows) c.episode.push_back(from_cache ? cache.episode[idx] : tags[idx]);
  for (std::size_t l = 0; l < n_layer; ++l) {
    std::vector<double> values(keep * n * d);
    for (std::size_t r = 0; r < keep; ++r) {
      const auto& [from_cache, idx] = rows[r];
      auto src = from_cache ? cache.layers[l].values() : inputs[l].values();
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx * n * d), n * d,
                  values.begin() + static_cast<std::ptrdiff_t>(r * n * d));
    }
    Tensor layer({keep, n, d}, std::move(values));
    layer.impl()->detached = true;
    c.layers.push_back(std::move(layer));
  }
  return out;
}

CoreOutput TimeSformerCore::unroll(const CoreInput& in, AgentState& state, bool record) const {
  check_core_input(in, spec_);
  auto& cache = std::get<FrameCache>(state);
  CoreOutput out;
  auto r = timesformer_core_forward(*this, in.frames, Tensor({in.steps()}, in.prev_reward), in.prev_logits, cache,
                                    in.resets, record ? &out.records : nullptr);
  out.policy_logits = r.policy_logits;
  out.baseline = r.baseline;
  cache = std::move(r.cache);
  return out;
}

}  // namespace attnrl

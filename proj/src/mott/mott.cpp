// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "attnrl/mott.hpp"

#include <cmath>
#include <numbers>

namespace attnrl {

Tensor build_spatial_basis(std::size_t h, std::size_t w, std::size_t u, std::size_t v) {
  if (u == 0 || v == 0) throw ContractError("spatial basis: U and V must be at least 1");
  if (h == 0 || w == 0) throw DimensionError("spatial basis: empty grid");
  const std::size_t per_axis = u + v;
  auto f = [&](std::size_t k, std::size_t i, std::size_t n) {
    const double x = std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    return k < u ? std::cos(static_cast<double>(k) * x) : std::sin(static_cast<double>(k - u + 1) * x);
  };
  const std::size_t c = per_axis * per_axis;
  std::vector<double> out(h * w * c);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t a = 0; a < per_axis; ++a)
        for (std::size_t b = 0; b < per_axis; ++b) out[(i * w + j) * c + a * per_axis + b] = f(a, i, h) * f(b, j, w);
  return Tensor({h, w, c}, std::move(out));
}

Tensor spatial_attention(const Tensor& keys, const Tensor& queries) {
  if (keys.rank() != 3 || queries.rank() != 2 || queries.dim(1) != keys.dim(2)) {
    throw DimensionError("spatial_attention: keys " + shape_str(keys.shape()) + ", queries " +
                         shape_str(queries.shape()));
  }
  const std::size_t h = keys.dim(0), w = keys.dim(1);
  const Tensor logits = matmul_nt(queries, reshape(keys, {h * w, keys.dim(2)}));
  return reshape(softmax(logits, 1), {queries.dim(0), h, w});
}

Tensor answer_vectors(const Tensor& maps, const Tensor& values) {
  if (maps.rank() != 3 || values.rank() != 3 || maps.dim(1) != values.dim(0) || maps.dim(2) != values.dim(1)) {
    throw DimensionError("answer_vectors: maps " + shape_str(maps.shape()) + ", values " +
                         shape_str(values.shape()));
  }
  const std::size_t hw = maps.dim(1) * maps.dim(2);
  return matmul(reshape(maps, {maps.dim(0), hw}), reshape(values, {hw, values.dim(2)}));
}

// ---- Front end

SpatialFrontEnd SpatialFrontEnd::init(const CoreSpec& spec, std::size_t seed_width, Rng& rng) {
  SpatialFrontEnd fe;
  fe.vision = VisionNet::init(spec.in_channels, spec.vision_widths, rng);
  const Shape out = fe.vision.output_shape(spec.height, spec.width);
  const std::size_t c = out[0];
  fe.map_h = out[1];
  fe.map_w = out[2];
  fe.key_channels = spec.key_channels == 0 ? c / 2 : spec.key_channels;
  if (fe.key_channels == 0 || fe.key_channels >= c) {
    throw ContractError("key_channels: " + std::to_string(fe.key_channels) + " must lie in [1, " +
                        std::to_string(c - 1) + "] for " + std::to_string(c) + " vision channels");
  }
  fe.value_channels = c - fe.key_channels;
  fe.heads = spec.heads;
  fe.basis = build_spatial_basis(fe.map_h, fe.map_w, spec.basis_u, spec.basis_v);
  const std::size_t q = fe.heads * fe.query_width();
  fe.query_mlp = Mlp::init({seed_width, 2 * q, q}, rng);
  return fe;
}

void SpatialFrontEnd::collect(const std::string& prefix, ParamList& out) const {
  vision.collect(prefix + ".vision", out);
  query_mlp.collect(prefix + ".query", out);
}

KeysValues spatial_keys_values(const SpatialFrontEnd& fe, const Tensor& frames) {
  const std::size_t t = frames.dim(0);
  const std::size_t hw = fe.map_h * fe.map_w;
  const std::size_t c = fe.key_channels + fe.value_channels;
  const Tensor features = permute(reshape(vision_forward(fe.vision, frames), {t, c, hw}), {0, 2, 1});
  // The frozen basis, repeated per step.
  const std::size_t cs = fe.basis_channels();
  std::vector<double> tiled(t * hw * cs);
  auto b = fe.basis.values();
  for (std::size_t s = 0; s < t; ++s) std::copy(b.begin(), b.end(), tiled.begin() + static_cast<std::ptrdiff_t>(s * hw * cs));
  const Tensor basis({t, hw, cs}, std::move(tiled));
  KeysValues kv;
  kv.keys = concat({slice(features, 2, 0, fe.key_channels), basis}, 2);
  kv.values = concat({slice(features, 2, fe.key_channels, fe.value_channels), basis}, 2);
  return kv;
}

SpatialReadout spatial_readout(const SpatialFrontEnd& fe, const KeysValues& kv, const Tensor& seeds) {
  const std::size_t t = seeds.dim(0);
  SpatialReadout r;
  r.queries = reshape(mlp_forward(fe.query_mlp, seeds), {t, fe.heads, fe.query_width()});
  r.maps = softmax(bmm_nt(r.queries, kv.keys), 2);
  r.answers = bmm(r.maps, kv.values);
  return r;
}

namespace {

// Appends the per-step maps [H x h x w] of a readout to out.
void keep_maps(const SpatialFrontEnd& fe, const SpatialReadout& r, std::vector<Tensor>& out) {
  const std::size_t t = r.maps.dim(0);
  for (std::size_t s = 0; s < t; ++s)
    out.push_back(reshape(slice(r.maps, 0, s, 1), {fe.heads, fe.map_h, fe.map_w}).detach());
}

// [answers, queries, r, logits] rows for T steps.
Tensor readout_tokens(const SpatialReadout& r, const Tensor& reward, const Tensor& prev_logits) {
  const std::size_t t = r.queries.dim(0);
  return concat({reshape(r.answers, {t, r.answers.numel() / t}), reshape(r.queries, {t, r.queries.numel() / t}),
                 reshape(reward, {t, 1}), prev_logits},
                1);
}

Tensor zeros_like_state(std::size_t n) { return Tensor({n}, 0.0); }

}  // namespace

// ---- Mott

MottCore::MottCore(const CoreSpec& spec) : spec_(spec) {
  Rng rng(spec.seed);
  front = SpatialFrontEnd::init(spec, spec.lstm_hidden, rng);
  const std::size_t in = spec.heads * (front.answer_width() + front.query_width()) + 1 + spec.num_actions;
  answer_mlp = Mlp::init({in, spec.answer_hidden, spec.answer_hidden}, rng);
  lstm = LstmCell::init(spec.answer_hidden, spec.lstm_hidden, rng);
  policy = Linear::init(spec.lstm_hidden, spec.num_actions, rng);
  value = Linear::init(spec.lstm_hidden, 1, rng);
}

AgentState MottCore::initial_state() const {
  return LstmState{zeros_like_state(spec_.lstm_hidden), zeros_like_state(spec_.lstm_hidden)};
}

ParamList MottCore::parameters() const {
  ParamList out;
  front.collect("front", out);
  answer_mlp.collect("answer", out);
  lstm.collect("lstm", out);
  policy.collect("policy", out);
  value.collect("value", out);
  return out;
}

namespace {

struct MottInner {
  Tensor logits, baseline, h, c;
  SpatialReadout readout;
};

MottInner mott_inner(const MottCore& core, const KeysValues& kv, const Tensor& reward, const Tensor& prev_logits,
                     const Tensor& h, const Tensor& c) {
  MottInner r;
  r.readout = spatial_readout(core.front, kv, reshape(h, {1, h.numel()}));
  const Tensor token = readout_tokens(r.readout, reward, prev_logits);
  const Tensor x = reshape(mlp_forward(core.answer_mlp, token), {core.answer_mlp.layers.back().out_features()});
  std::tie(r.h, r.c) = lstm_step(core.lstm, x, h, c);
  r.logits = linear_forward(core.policy, r.h);
  r.baseline = linear_forward(core.value, r.h);
  return r;
}

}  // namespace

MottStep mott_step(const MottCore& core, const Tensor& frame, double prev_reward, const Tensor& prev_logits,
                   const LstmState& state) {
  const CoreSpec& s = core.spec();
  if (frame.shape() != Shape{s.in_channels, s.height, s.width} || prev_logits.shape() != Shape{s.num_actions}) {
    throw DimensionError("mott_step: frame " + shape_str(frame.shape()) + ", prev_logits " +
                         shape_str(prev_logits.shape()));
  }
  const KeysValues kv = spatial_keys_values(core.front, reshape(frame, {1, s.in_channels, s.height, s.width}));
  MottInner r = mott_inner(core, kv, Tensor({1}, prev_reward), reshape(prev_logits, {1, s.num_actions}), state.h,
                           state.c);
  MottStep out;
  out.policy_logits = r.logits;
  out.baseline = r.baseline;
  out.state = {r.h, r.c};
  out.maps = reshape(r.readout.maps, {core.front.heads, core.front.map_h, core.front.map_w});
  return out;
}

CoreOutput MottCore::unroll(const CoreInput& in, AgentState& state, bool record) const {
  check_core_input(in, spec_);
  auto& st = std::get<LstmState>(state);
  const std::size_t t = in.steps();
  const KeysValues all = spatial_keys_values(front, in.frames);
  Tensor h = st.h.defined() ? st.h : zeros_like_state(spec_.lstm_hidden);
  Tensor c = st.c.defined() ? st.c : zeros_like_state(spec_.lstm_hidden);
  CoreOutput out;
  std::vector<Tensor> logits, values;
  for (std::size_t s = 0; s < t; ++s) {
    if (!in.resets.empty() && in.resets[s]) {
      h = zeros_like_state(spec_.lstm_hidden);
      c = zeros_like_state(spec_.lstm_hidden);
    }
    const KeysValues kv{slice(all.keys, 0, s, 1), slice(all.values, 0, s, 1)};
    MottInner r = mott_inner(*this, kv, Tensor({1}, in.prev_reward[s]), slice(in.prev_logits, 0, s, 1), h, c);
    h = r.h;
    c = r.c;
    logits.push_back(reshape(r.logits, {1, spec_.num_actions}));
    values.push_back(r.baseline);
    if (record) keep_maps(front, r.readout, out.spatial_maps);
  }
  out.policy_logits = t == 1 ? logits[0] : concat(logits, 0);
  out.baseline = t == 1 ? values[0] : concat(values, 0);
  st = LstmState{h.detach(), c.detach()};
  return out;
}

// ---- Spatio-temporal

SpatioTemporalCore::SpatioTemporalCore(const CoreSpec& spec, QuerySource source) : spec_(spec), source_(source) {
  Rng rng(spec.seed);
  front = SpatialFrontEnd::init(spec, spec.d_model, rng);
  const std::size_t in = spec.heads * (front.answer_width() + front.query_width()) + 1 + spec.num_actions;
  embed = Linear::init(in, spec.d_model, rng);
  txl = TxlStack::init(spec.d_model, spec.heads, spec.n_layer, spec.mem_len, spec.max_pos, rng);
  policy = Linear::init(spec.d_model, spec.num_actions, rng);
  value = Linear::init(spec.d_model, 1, rng);
}

AgentState SpatioTemporalCore::initial_state() const {
  return SpatioTemporalState{TxlMemory{}, zeros_like_state(spec_.d_model)};
}

ParamList SpatioTemporalCore::parameters() const {
  ParamList out;
  front.collect("front", out);
  embed.collect("embed", out);
  txl.collect("txl", out);
  policy.collect("policy", out);
  value.collect("value", out);
  return out;
}

CoreOutput SpatioTemporalCore::unroll(const CoreInput& in, AgentState& state, bool record) const {
  check_core_input(in, spec_);
  auto& st = std::get<SpatioTemporalState>(state);
  if (!st.prev_output.defined()) st.prev_output = zeros_like_state(spec_.d_model);
  return source_ == QuerySource::actor_cached ? unroll_cached(in, st, record) : unroll_sequential(in, st, record);
}

CoreOutput SpatioTemporalCore::unroll_cached(const CoreInput& in, SpatioTemporalState& st, bool record) const {
  const std::size_t t = in.steps();
  if (!in.query_seeds.defined() || in.query_seeds.shape() != Shape{t, spec_.d_model}) {
    throw ContractError("sp-temp-oneshot: needs query seeds [" + std::to_string(t) + " x " +
                        std::to_string(spec_.d_model) + "] from the rollout, got " +
                        (in.query_seeds.defined() ? shape_str(in.query_seeds.shape()) : "<none>"));
  }
  CoreOutput out;
  const SpatialReadout r = spatial_readout(front, spatial_keys_values(front, in.frames), in.query_seeds);
  const Tensor tokens = readout_tokens(r, Tensor({t}, in.prev_reward), in.prev_logits);
  TxlResult x = txl_segment_forward(txl, linear_forward(embed, tokens), st.memory, in.resets,
                                    record ? &out.records : nullptr);
  out.policy_logits = linear_forward(policy, x.output);
  out.baseline = reshape(linear_forward(value, x.output), {t});
  out.query_seeds = in.query_seeds.detach();
  if (record) keep_maps(front, r, out.spatial_maps);
  st.memory = std::move(x.memory);
  st.prev_output = reshape(slice(x.output, 0, t - 1, 1), {spec_.d_model}).detach();
  return out;
}

CoreOutput SpatioTemporalCore::unroll_sequential(const CoreInput& in, SpatioTemporalState& st, bool record) const {
  const std::size_t t = in.steps();
  CoreOutput out;
  std::vector<Tensor> logits, values, seeds;
  Tensor prev = st.prev_output;
  TxlMemory memory = st.memory;
  const Shape frame{1, spec_.in_channels, spec_.height, spec_.width};
  for (std::size_t s = 0; s < t; ++s) {
    const bool reset = !in.resets.empty() && in.resets[s];
    if (reset) prev = zeros_like_state(spec_.d_model);
    const Tensor seed = reshape(prev, {1, spec_.d_model});
    seeds.push_back(seed.detach());
    // Each step waits for the previous output, so vision runs per step too.
    const KeysValues kv = spatial_keys_values(front, slice(in.frames, 0, s, 1));
    const SpatialReadout r = spatial_readout(front, kv, seed);
    const Tensor token = readout_tokens(r, Tensor({1}, in.prev_reward[s]), slice(in.prev_logits, 0, s, 1));
    TxlResult x = txl_segment_forward(txl, linear_forward(embed, token), memory,
                                      {static_cast<std::uint8_t>(reset ? 1 : 0)}, record ? &out.records : nullptr,
                                      true);
    memory = std::move(x.memory);
    prev = reshape(x.output, {spec_.d_model});
    logits.push_back(linear_forward(policy, x.output));
    values.push_back(reshape(linear_forward(value, x.output), {1}));
    if (record) keep_maps(front, r, out.spatial_maps);
  }
  out.policy_logits = t == 1 ? logits[0] : concat(logits, 0);
  out.baseline = t == 1 ? values[0] : concat(values, 0);
  out.query_seeds = t == 1 ? seeds[0] : concat(seeds, 0);
  st.memory = detach_memory(memory);
  st.prev_output = prev.detach();
  return out;
}

CoreOutput SpatioTemporalCore::act(const CoreInput& in, AgentState& state, bool record) const {
  if (source_ == QuerySource::sequential) return unroll(in, state, record);
  if (in.steps() != 1) throw ContractError("sp-temp-oneshot: act() takes one step at a time");
  auto& st = std::get<SpatioTemporalState>(state);
  const bool reset = !in.resets.empty() && in.resets[0];
  CoreInput step = in;
  step.query_seeds = reset || !st.prev_output.defined() ? Tensor({1, spec_.d_model}, 0.0)
                                                        : reshape(st.prev_output, {1, spec_.d_model});
  return unroll(step, state, record);
}

}  // namespace attnrl

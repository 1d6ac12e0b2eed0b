// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "attnrl/adaptive.hpp"
#include "../support/gradcheck.hpp"

using namespace attnrl;
using attnrl::testing::check_gradients;
using attnrl::testing::random_tensor;

namespace {

// Direct evaluation of softmax(Q K^T / sqrt(d_k)) V with scalar loops.
std::pair<std::vector<double>, std::vector<double>> sdpa_oracle(const Tensor& Q, const Tensor& K,
                                                                const Tensor& V) {
  const std::size_t nq = Q.dim(0), nk = K.dim(0), dk = Q.dim(1), dv = V.dim(1);
  std::vector<double> a(nq * nk), y(nq * dv, 0.0);
  for (std::size_t i = 0; i < nq; ++i) {
    double z = 0.0;
    std::vector<double> e(nk);
    for (std::size_t j = 0; j < nk; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < dk; ++c) s += Q[i * dk + c] * K[j * dk + c];
      e[j] = std::exp(s / std::sqrt(static_cast<double>(dk)));
      z += e[j];
    }
    for (std::size_t j = 0; j < nk; ++j) a[i * nk + j] = e[j] / z;
    for (std::size_t c = 0; c < dv; ++c)
      for (std::size_t j = 0; j < nk; ++j) y[i * dv + c] += a[i * nk + j] * V[j * dv + c];
  }
  return {a, y};
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor rows(const Tensor& x, std::size_t start, std::size_t len) {
  NoGradGuard g;
  return slice(x, 0, start, len);
}

std::vector<std::pair<std::string, Tensor>> as_leaves(const ParamList& params) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& p : params) out.emplace_back(p.name, p.tensor);
  return out;
}

}  // namespace

TEST_CASE("sdpa: single key and orthogonal query examples") {
  Tensor Q({2, 3}, {1, 2, 3, -1, 0, 4});
  Tensor K({1, 3}, {0.5, 0.5, 0.5});
  Tensor V({1, 2}, {7, 9});
  auto r = sdpa(Q, K, V);
  for (double v : r.a.values()) CHECK(v == 1.0);
  CHECK(r.y[0] == 7.0);
  CHECK(r.y[3] == 9.0);

  Tensor q({1, 2}, {1, 0});
  Tensor k({4, 2}, {0, 1, 0, -2, 0, 3, 0, 0.5});
  auto u = sdpa(q, k, Tensor({4, 1}, {1, 2, 3, 4}));
  for (double v : u.a.values()) CHECK(v == 0.25);
}

TEST_CASE("sdpa: random 3x3 cases match the scalar-loop oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    auto Q = random_tensor({3, 3}, rng, -2, 2, false);
    auto K = random_tensor({3, 3}, rng, -2, 2, false);
    auto V = random_tensor({3, 3}, rng, -2, 2, false);
    auto r = sdpa(Q, K, V);
    auto [a, y] = sdpa_oracle(Q, K, V);
    for (std::size_t i = 0; i < 9; ++i) {
      CHECK(std::abs(r.a[i] - a[i]) <= 1e-12);
      CHECK(std::abs(r.y[i] - y[i]) <= 1e-12);
    }
  }
}

TEST_CASE("sdpa: masked keys get exactly zero probability and a dead row is rejected") {
  Rng rng(2);
  auto Q = random_tensor({3, 4}, rng, -3, 3, false);
  auto K = random_tensor({5, 4}, rng, -3, 3, false);
  auto V = random_tensor({5, 2}, rng, -3, 3, false);
  Mask m = causal_mask(3, 5);
  auto r = sdpa(Q, K, V, m);
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      if (!m[i * 5 + j]) CHECK(r.a[i * 5 + j] == 0.0);
      s += r.a[i * 5 + j];
    }
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
  Mask dead(15, 1);
  for (std::size_t j = 0; j < 5; ++j) dead[5 + j] = 0;
  CHECK_THROWS_AS(sdpa(Q, K, V, dead), ContractError);
}

TEST_CASE("causal_mask examples") {
  CHECK(causal_mask(3, 3) == Mask{1, 0, 0, 1, 1, 0, 1, 1, 1});
  CHECK(causal_mask(1, 5) == Mask{1, 1, 1, 1, 1});
  CHECK(causal_mask(2, 4) == Mask{1, 1, 1, 0, 1, 1, 1, 1});
  CHECK_THROWS_AS(causal_mask(3, 2), DimensionError);
}

TEST_CASE("mha: one head equals sdpa composed with the projections") {
  Rng rng(3);
  auto mha = MultiHeadAttention::init(4, 1, rng);
  auto xq = random_tensor({3, 4}, rng, -1, 1, false);
  auto xkv = random_tensor({5, 4}, rng, -1, 1, false);
  Mask m = causal_mask(3, 5);
  Tensor y = mha_forward(mha, xq, xkv, m);
  auto r = sdpa(matmul_nt(xq, mha.W_q), matmul_nt(xkv, mha.W_k), matmul_nt(xkv, mha.W_v), m);
  CHECK(max_abs_diff(y, matmul_nt(r.y, mha.W_o)) <= 1e-12);
}

TEST_CASE("mha: permuting heads with matching W_o input blocks leaves the output unchanged") {
  Rng rng(4);
  const std::size_t d = 6, h = 3, dk = 2;
  auto mha = MultiHeadAttention::init(d, h, rng);
  const std::vector<std::size_t> perm{2, 0, 1};
  MultiHeadAttention swapped = mha;
  swapped.W_q = mha.W_q.clone();
  swapped.W_k = mha.W_k.clone();
  swapped.W_v = mha.W_v.clone();
  swapped.W_o = mha.W_o.clone();
  for (std::size_t nh = 0; nh < h; ++nh) {
    const std::size_t oh = perm[nh];
    for (std::size_t r = 0; r < dk; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        for (auto [dst, src] : {std::pair{&swapped.W_q, &mha.W_q}, std::pair{&swapped.W_k, &mha.W_k},
                                std::pair{&swapped.W_v, &mha.W_v}}) {
          dst->mutable_values()[(nh * dk + r) * d + c] = (*src)[(oh * dk + r) * d + c];
        }
        swapped.W_o.mutable_values()[c * d + nh * dk + r] = mha.W_o[c * d + oh * dk + r];
      }
    }
  }
  auto x = random_tensor({4, d}, rng, -1, 1, false);
  CHECK(max_abs_diff(mha_forward(mha, x, x), mha_forward(swapped, x, x)) <= 1e-12);
}

TEST_CASE("mha: gradient of sum(output) matches finite differences") {
  Rng rng(5);
  auto mha = MultiHeadAttention::init(4, 2, rng);
  auto xq = random_tensor({3, 4}, rng);
  auto xkv = random_tensor({4, 4}, rng);
  ParamList params;
  mha.collect("mha", params);
  auto leaves = as_leaves(params);
  leaves.emplace_back("x_q", xq);
  leaves.emplace_back("x_kv", xkv);
  auto r = check_gradients([&] { return sum(mha_forward(mha, xq, xkv, causal_mask(3, 4))); }, leaves);
  CHECK(r.max_rel_error <= 1e-5);
}

TEST_CASE("attention records: every row sums to one") {
  Rng rng(6);
  auto mha = MultiHeadAttention::init(8, 4, rng);
  auto x = random_tensor({5, 8}, rng, -2, 2, false);
  AttentionRecord rec;
  mha_forward(mha, x, x, causal_mask(5, 5), {&rec, 0, "q", "k"});
  REQUIRE(rec.maps.size() == 4);
  for (const auto& m : rec.maps) {
    for (std::size_t i = 0; i < m.rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m.cols; ++j) s += m.probs[i * m.cols + j];
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("encoder: zeroed block weights make the stack an identity map") {
  Rng rng(7);
  TxlStack stack = TxlStack::init(8, 2, 2, 10, 16, rng);
  for (auto& b : stack.blocks) b.zero_weights();
  auto x = random_tensor({4, 8}, rng, -1, 1, false);
  Tensor y = x;
  for (const auto& b : stack.blocks) y = encoder_block_forward(b, y, Tensor(), causal_mask(4, 4));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("txl: empty memory equals a plain masked encoder stack") {
  Rng rng(8);
  TxlStack stack = TxlStack::init(8, 2, 2, 10, 16, rng);
  auto seg = random_tensor({5, 8}, rng, -1, 1, false);
  auto r = txl_segment_forward(stack, seg, TxlMemory{});
  Tensor x = add(seg, slice(stack.positions, 0, 0, 5));
  for (const auto& b : stack.blocks) x = encoder_block_forward(b, x, Tensor(), causal_mask(5, 5));
  CHECK(max_abs_diff(r.output, x) <= 1e-12);
  CHECK(r.memory.size() == 5);
  for (const auto& layer : r.memory.layers) CHECK(layer.is_detached());
}

TEST_CASE("txl: chunked processing with the cache equals one full segment") {
  Rng rng(9);
  TxlStack stack = TxlStack::init(8, 2, 2, 6, 32, rng);
  auto seq = random_tensor({10, 8}, rng, -1, 1, false);
  auto full = txl_segment_forward(stack, seq, TxlMemory{});
  auto first = txl_segment_forward(stack, rows(seq, 0, 4), TxlMemory{});
  auto second = txl_segment_forward(stack, rows(seq, 4, 6), first.memory);
  CHECK(max_abs_diff(second.output, rows(full.output, 4, 6)) <= 1e-9);
  CHECK(second.memory.size() == 6);
}

TEST_CASE("txl: a reset hides earlier tokens and restarts positions") {
  Rng rng(10);
  TxlStack stack = TxlStack::init(8, 2, 1, 20, 32, rng);
  auto seq = random_tensor({6, 8}, rng, -1, 1, false);
  std::vector<std::uint8_t> resets{0, 0, 0, 1, 0, 0};
  auto joined = txl_segment_forward(stack, seq, TxlMemory{}, resets);
  auto alone = txl_segment_forward(stack, rows(seq, 3, 3), TxlMemory{});
  CHECK(max_abs_diff(rows(joined.output, 3, 3), alone.output) <= 1e-12);
  CHECK(joined.memory.size() == 3);
  CHECK(joined.memory.next_position == 3);
}

TEST_CASE("txl: gradients never reach cached tokens") {
  Rng rng(11);
  TxlStack stack = TxlStack::init(8, 2, 1, 10, 32, rng);
  auto a = random_tensor({3, 8}, rng);
  auto b = random_tensor({3, 8}, rng);
  auto w = random_tensor({3, 8}, rng, -1, 1, false);
  ParamList params;
  stack.collect("txl", params);

  auto first = txl_segment_forward(stack, a, TxlMemory{});
  Graph::current().reset();
  auto second = txl_segment_forward(stack, b, first.memory);
  backward(sum(mul(second.output, w)));
  CHECK_FALSE(a.has_grad());
  std::vector<double> cached_grads(params[0].tensor.grad().begin(), params[0].tensor.grad().end());
  for (auto& p : params) p.tensor.zero_grad();
  b.zero_grad();

  // Attached recompute: the same loss now also flows into a.
  auto full = txl_segment_forward(stack, concat({a, b}, 0), TxlMemory{});
  backward(sum(mul(slice(full.output, 0, 3, 3), w)));
  REQUIRE(a.has_grad());
  double norm = 0.0;
  for (double g : a.grad()) norm += g * g;
  CHECK(norm > 0.0);
  double diff = 0.0;
  auto attached = params[0].tensor.grad();
  for (std::size_t i = 0; i < attached.size(); ++i) diff += std::abs(attached[i] - cached_grads[i]);
  CHECK(diff > 0.0);
}

TEST_CASE("txl: gradient of a two-layer segment with memory") {
  Rng rng(12);
  TxlStack stack = TxlStack::init(4, 2, 2, 5, 16, rng);
  auto pre = random_tensor({3, 4}, rng, -1, 1, false);
  auto memory = txl_segment_forward(stack, pre, TxlMemory{}).memory;
  auto seg = random_tensor({3, 4}, rng);
  auto w = random_tensor({3, 4}, rng, -1, 1, false);
  ParamList params;
  stack.collect("txl", params);
  auto leaves = as_leaves(params);
  leaves.emplace_back("segment", seg);
  auto r = check_gradients([&] { return sum(mul(txl_segment_forward(stack, seg, memory).output, w)); },
                           leaves);
  CHECK(r.max_rel_error <= 1e-5);
}

TEST_CASE("adaptive: zero heads give a uniform policy") {
  CoreSpec spec;
  spec.height = spec.width = 8;
  spec.in_channels = 1;
  spec.d_model = 8;
  spec.heads = 2;
  spec.shrink = 8;
  AdaptiveCore core(spec);
  core.policy.zero();
  CoreInput in{Tensor({3, 1, 8, 8}, 1.0), {0, 1, 0}, Tensor({3, 3}, 0.0), {}, {}};
  AgentState state = core.initial_state();
  auto out = core.unroll(in, state);
  for (double v : out.policy_logits.values()) CHECK(v == 0.0);
  auto p = softmax(out.policy_logits, 1);
  for (double v : p.values()) CHECK(std::abs(v - 1.0 / 3) <= 1e-15);
}

TEST_CASE("adaptive: one step with empty memory equals the plain encoder path") {
  CoreSpec spec;
  spec.height = spec.width = 8;
  spec.in_channels = 2;
  spec.d_model = 8;
  spec.heads = 2;
  spec.shrink = 6;
  AdaptiveCore core(spec);
  Rng rng(13);
  auto frame = random_tensor({1, 2, 8, 8}, rng, 0, 1, false);
  auto logits = random_tensor({1, 3}, rng, -1, 1, false);
  auto out = adaptive_core_forward(core, core.encode(frame), Tensor({1}, 0.5), logits, TxlMemory{});
  Tensor tok = linear_forward(core.embed, concat({core.encode(frame), Tensor({1, 1}, 0.5), logits}, 1));
  Tensor x = add(tok, slice(core.txl.positions, 0, 0, 1));
  x = encoder_block_forward(core.txl.blocks[0], x, Tensor(), Mask{1});
  CHECK(max_abs_diff(out.policy_logits, linear_forward(core.policy, x)) <= 1e-12);
}

TEST_CASE("adaptive: perturbing step t leaves earlier outputs bit-identical") {
  CoreSpec spec;
  spec.height = spec.width = 8;
  spec.in_channels = 1;
  spec.d_model = 8;
  spec.heads = 2;
  spec.shrink = 8;
  AdaptiveCore core(spec);
  Rng rng(14);
  NoGradGuard guard;
  for (int trial = 0; trial < 20; ++trial) {
    auto frames = random_tensor({6, 1, 8, 8}, rng, 0, 1, false);
    CoreInput in{frames, {0, 1, 0, 0, -1, 0}, random_tensor({6, 3}, rng, -1, 1, false), {}, {}};
    AgentState s1 = core.initial_state();
    auto base = core.unroll(in, s1);
    const std::size_t t = static_cast<std::size_t>(trial % 5) + 1;
    CoreInput changed = in;
    changed.frames = frames.clone();
    for (std::size_t i = 0; i < 64; ++i) changed.frames.mutable_values()[t * 64 + i] += 0.5;
    AgentState s2 = core.initial_state();
    auto pert = core.unroll(changed, s2);
    for (std::size_t i = 0; i < t * 3; ++i) CHECK(base.policy_logits[i] == pert.policy_logits[i]);
    bool differs = false;
    for (std::size_t i = t * 3; i < 18; ++i) differs = differs || base.policy_logits[i] != pert.policy_logits[i];
    CHECK(differs);
  }
}

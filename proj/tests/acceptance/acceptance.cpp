// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// when any selected criterion fails.
//
//   acceptance [--only 1,2,...] [--skip 6]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "attnrl/cli.hpp"
#include "attnrl/mott.hpp"
#include "attnrl/timesformer.hpp"
#include "attnrl/viz.hpp"
#include "support/gradcheck.hpp"
#include "support/vtrace_oracle.hpp"

using namespace attnrl;
using attnrl::testing::check_gradients;
using attnrl::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Leaves = std::vector<std::pair<std::string, Tensor>>;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

// ---- small cores shared by several criteria

CoreSpec small_spec(const std::string& arch) {
  CoreSpec s;
  s.arch = arch;
  s.in_channels = 2;
  s.height = s.width = 16;
  s.vision_widths = {3, 4};
  s.shrink = 6;
  s.d_model = 8;
  s.heads = 2;
  s.mem_len = 16;
  s.max_pos = 32;
  s.basis_u = s.basis_v = 2;
  s.answer_hidden = 8;
  s.lstm_hidden = 5;
  s.emb_size = 4;
  s.patch_size = 8;
  s.hybrid = false;
  s.seed = 11;
  return s;
}

const std::vector<std::string> kArchs = {"mott", "adaptive", "sp-temp-seq", "sp-temp-oneshot", "divided", "joint"};

CoreInput random_input(const PolicyCore& core, std::size_t t, Rng& rng) {
  const CoreSpec& s = core.spec();
  CoreInput in;
  in.frames = random_tensor({t, s.in_channels, s.height, s.width}, rng, 0, 1, false);
  std::uniform_real_distribution<double> u(-1, 1);
  for (std::size_t i = 0; i < t; ++i) in.prev_reward.push_back(u(rng));
  in.prev_logits = random_tensor({t, s.num_actions}, rng, -1, 1, false);
  in.resets.assign(t, 0);
  if (core.needs_query_seeds()) in.query_seeds = random_tensor({t, core.query_seed_width()}, rng, -1, 1, false);
  return in;
}

CoreInput rows_of(const CoreInput& in, std::size_t start, std::size_t len) {
  CoreInput out;
  out.frames = slice(in.frames, 0, start, len);
  out.prev_reward.assign(in.prev_reward.begin() + static_cast<std::ptrdiff_t>(start),
                         in.prev_reward.begin() + static_cast<std::ptrdiff_t>(start + len));
  out.prev_logits = slice(in.prev_logits, 0, start, len);
  out.resets.assign(in.resets.begin() + static_cast<std::ptrdiff_t>(start),
                    in.resets.begin() + static_cast<std::ptrdiff_t>(start + len));
  if (in.query_seeds.defined()) out.query_seeds = slice(in.query_seeds, 0, start, len);
  return out;
}

// Zero-initialized vectors put ReLUs on their kink at a zero state, where
// central differences are one-sided. Nudge them off it.
void jitter_zero_vectors(const PolicyCore& core, Rng& rng) {
  std::uniform_real_distribution<double> d(-0.2, 0.2);
  for (const auto& p : core.parameters()) {
    if (p.tensor.rank() != 1) continue;
    auto v = p.tensor.values();
    if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }))
      for (double& x : Tensor(p.tensor).mutable_values()) x = d(rng);
  }
}

Leaves leaves_of(const PolicyCore& core) {
  Leaves out;
  for (const auto& p : core.parameters()) out.emplace_back(p.name, p.tensor);
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---- 1. gradients

Verdict criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  double worst_op = 0.0, worst_core = 0.0;
  std::string worst_op_name, worst_core_name;
  auto op = [&](const std::string& name, const std::function<Tensor()>& loss, const Leaves& leaves) {
    const auto r = check_gradients(loss, leaves);
    if (r.max_rel_error >= worst_op) {
      worst_op = r.max_rel_error;
      worst_op_name = name;
    }
  };
  // A random projection turns any output into a scalar with a generic gradient.
  auto project = [&](const Tensor& y) {
    static std::map<Shape, Tensor> weights;
    auto it = weights.find(y.shape());
    if (it == weights.end()) it = weights.emplace(y.shape(), random_tensor(y.shape(), rng, -1, 1, false)).first;
    return sum(mul(y, it->second));
  };

  for (int trial = 0; trial < 3; ++trial) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng), b = dim(rng);
    Tensor a = random_tensor({m, n}, rng), c = random_tensor({m, n}, rng), row = random_tensor({n}, rng);
    op("add", [&] { return project(add(a, c)); }, {{"a", a}, {"c", c}});
    op("sub", [&] { return project(sub(a, c)); }, {{"a", a}, {"c", c}});
    op("mul", [&] { return project(mul(a, c)); }, {{"a", a}, {"c", c}});
    op("scale", [&] { return project(scale(a, -1.7)); }, {{"a", a}});
    op("add_scalar", [&] { return project(add_scalar(a, 0.3)); }, {{"a", a}});
    op("add_row", [&] { return project(add_row(a, row)); }, {{"a", a}, {"row", row}});
    op("mul_row", [&] { return project(mul_row(a, row)); }, {{"a", a}, {"row", row}});
    op("reshape", [&] { return project(reshape(a, {n, m})); }, {{"a", a}});
    op("transpose", [&] { return project(transpose(a)); }, {{"a", a}});
    Tensor t3 = random_tensor({b, m, n}, rng);
    op("permute", [&] { return project(permute(t3, {2, 0, 1})); }, {{"t", t3}});
    op("concat", [&] { return project(concat({a, c}, 1)); }, {{"a", a}, {"c", c}});
    op("slice", [&] { return project(slice(t3, 2, n > 1 ? 1 : 0, 1)); }, {{"t", t3}});
    std::vector<std::size_t> cols, rows;
    for (std::size_t i = 0; i < m; ++i) cols.push_back(i % n);
    for (std::size_t i = 0; i < m + 2; ++i) rows.push_back((i * 7) % m);
    op("gather_columns", [&] { return project(gather_columns(a, cols)); }, {{"a", a}});
    op("index_rows", [&] { return project(index_rows(t3.dim(0) ? a : a, rows)); }, {{"a", a}});
    std::vector<std::uint8_t> allowed(m * n);
    for (std::size_t i = 0; i < allowed.size(); ++i) allowed[i] = i % 3 != 1;
    op("masked_fill", [&] { return project(masked_fill(a, allowed, -5.0)); }, {{"a", a}});
    op("sum", [&] { return sum(mul(a, a)); }, {{"a", a}});
    op("sum_axis", [&] { return project(sum(t3, 1)); }, {{"t", t3}});
    op("mean", [&] { return mean(mul(a, c)); }, {{"a", a}, {"c", c}});
    Tensor x = random_tensor({m, k}, rng), w = random_tensor({k, n}, rng), wn = random_tensor({n, k}, rng);
    op("matmul", [&] { return project(matmul(x, w)); }, {{"x", x}, {"w", w}});
    op("matmul_nt", [&] { return project(matmul_nt(x, wn)); }, {{"x", x}, {"w", wn}});
    Tensor bx = random_tensor({b, m, k}, rng), bw = random_tensor({b, k, n}, rng), bwn = random_tensor({b, n, k}, rng);
    op("bmm", [&] { return project(bmm(bx, bw)); }, {{"x", bx}, {"w", bw}});
    op("bmm_nt", [&] { return project(bmm_nt(bx, bwn)); }, {{"x", bx}, {"w", bwn}});
    op("softmax", [&] { return project(softmax(t3, 2)); }, {{"t", t3}});
    op("softmax_axis0", [&] { return project(softmax(t3, 0)); }, {{"t", t3}});
    op("log_softmax", [&] { return project(log_softmax(a, 1)); }, {{"a", a}});
    Tensor ln_x = random_tensor({m, n + 1}, rng, -2, 2), g = random_tensor({n + 1}, rng), bb = random_tensor({n + 1}, rng);
    op("layer_norm", [&] { return project(layer_norm(ln_x, g, bb, 1, 1e-5)); }, {{"x", ln_x}, {"g", g}, {"b", bb}});
    Tensor pos = random_tensor({m, n}, rng, 0.5, 2.0);
    for (auto kind : {Activation::relu, Activation::gelu, Activation::sigmoid, Activation::tanh, Activation::exp})
      op("activation", [&] { return project(activation(kind, a)); }, {{"a", a}});
    op("log", [&] { return project(activation(Activation::log, pos)); }, {{"a", pos}});
    Tensor img = random_tensor({2, 2, 5, 7}, rng), ker = random_tensor({3, 2, 3, 3}, rng), kb = random_tensor({3}, rng);
    op("conv2d", [&] { return project(conv2d(img, ker, kb, 2, 1)); }, {{"x", img}, {"k", ker}, {"b", kb}});
    op("conv2d_nobias", [&] { return project(conv2d(img, ker, 1, 0)); }, {{"x", img}, {"k", ker}});
    std::vector<double> distinct(2 * 4 * 6);
    for (std::size_t i = 0; i < distinct.size(); ++i) distinct[i] = std::sin(1.3 * static_cast<double>(i) + trial);
    Tensor pool_in({2, 4, 6}, distinct);
    pool_in.set_requires_grad(true);
    op("max_pool2d", [&] { return project(max_pool2d(pool_in, 2)); }, {{"x", pool_in}});
    auto mha = MultiHeadAttention::init(4, 2, rng);
    Tensor q = random_tensor({m, 4}, rng), kv = random_tensor({k + 1, 4}, rng);
    Leaves mha_leaves{{"q", q}, {"kv", kv}};
    ParamList mp;
    mha.collect("mha", mp);
    for (const auto& p : mp) mha_leaves.emplace_back(p.name, p.tensor);
    op("mha", [&] { return project(mha_forward(mha, q, kv)); }, mha_leaves);
  }

  Rng crng(202);
  auto core_check = [&](const std::string& name, const std::function<Tensor()>& loss, const Leaves& leaves) {
    const auto r = check_gradients(loss, leaves);
    if (r.max_rel_error >= worst_core) {
      worst_core = r.max_rel_error;
      worst_core_name = name + " (" + r.worst_leaf + ")";
    }
  };
  {
    auto core = make_core(small_spec("mott"));
    jitter_zero_vectors(*core, crng);
    const auto& mott = dynamic_cast<const MottCore&>(*core);
    const Tensor frame = random_tensor({2, 16, 16}, crng, 0, 1, false);
    const Tensor logits = random_tensor({3}, crng, -1, 1, false);
    LstmState st{random_tensor({5}, crng, -0.5, 0.5, false), random_tensor({5}, crng, -0.5, 0.5, false)};
    core_check("mott_step", [&] {
      const MottStep s = mott_step(mott, frame, 0.5, logits, st);
      return add(sum(mul(s.policy_logits, Tensor({3}, std::vector<double>{1.0, -0.7, 0.4}))), sum(s.baseline));
    }, leaves_of(*core));
  }
  for (const std::string arch : {"adaptive", "divided", "joint", "sp-temp-seq"}) {
    CoreSpec spec = small_spec(arch);
    auto core = make_core(spec);
    jitter_zero_vectors(*core, crng);
    const CoreInput in = random_input(*core, 4, crng);
    AgentState warm = core->initial_state();
    {
      NoGradGuard g;
      core->unroll(rows_of(in, 0, 2), warm);
    }
    const Tensor wlog = random_tensor({2, spec.num_actions}, crng, -1, 1, false);
    core_check(arch, [&] {
      AgentState st = warm;
      const auto out = core->unroll(rows_of(in, 2, 2), st);
      return add(sum(mul(out.policy_logits, wlog)), sum(out.baseline));
    }, leaves_of(*core));
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = worst_op <= 1e-5 && worst_core <= 1e-4 && secs < 120.0;
  v.detail = "ops max rel err " + fmt(worst_op) + " [" + worst_op_name + "], cores " + fmt(worst_core) + " [" +
             worst_core_name + "], " + fmt(secs) + " s";
  return v;
}

// ---- 2. V-trace

Verdict criterion_vtrace() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(303);
  double sum_err = 0.0, bellman_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial) % 8;
    auto off = attnrl::testing::random_trajectory(rng, n, 4, false);
    const auto w = vtrace::truncated_is_weights(off, 1.0, 1.0);
    const auto out = vtrace::vtrace_targets(off, 0.97, w.rho, w.c);
    const auto ref = attnrl::testing::vtrace_summation(off, 0.97, w.rho, w.c);
    for (std::size_t t = 0; t < n; ++t) sum_err = std::max(sum_err, std::abs(out.vs[t] - ref[t]));
    auto on = attnrl::testing::random_trajectory(rng, n, 4, true);
    const auto w1 = vtrace::truncated_is_weights(on, 1.0, 1.0);
    const auto o1 = vtrace::vtrace_targets(on, 0.97, w1.rho, w1.c);
    const auto bell = attnrl::testing::n_step_targets(on, 0.97);
    for (std::size_t t = 0; t < n; ++t) bellman_err = std::max(bellman_err, std::abs(o1.vs[t] - bell[t]));
  }
  const double secs = seconds_since(t0);
  return {sum_err <= 1e-12 && bellman_err <= 1e-12 && secs < 10.0,
          "1000 trajectories, summation err " + fmt(sum_err) + ", n-step err " + fmt(bellman_err) + ", " +
              fmt(secs) + " s"};
}

// ---- 3. causality

Verdict criterion_causality() {
  Rng rng(404);
  std::size_t violations = 0, trials = 0;
  std::string bad;
  for (const auto& arch : kArchs) {
    auto core = make_core(small_spec(arch));
    NoGradGuard g;
    for (int trial = 0; trial < 100; ++trial, ++trials) {
      const std::size_t steps = 6;
      const CoreInput in = random_input(*core, steps, rng);
      const std::size_t t = 1 + static_cast<std::size_t>(trial) % (steps - 1);
      CoreInput pert = in;
      pert.frames = in.frames.clone();
      const std::size_t per = in.frames.numel() / steps;
      std::uniform_real_distribution<double> u(-0.5, 0.5);
      for (std::size_t i = t * per; i < steps * per; ++i) pert.frames.mutable_values()[i] += u(rng);
      for (std::size_t i = t; i < steps; ++i) pert.prev_reward[i] += 1.0;
      pert.prev_logits = in.prev_logits.clone();
      for (std::size_t i = t * 3; i < steps * 3; ++i) pert.prev_logits.mutable_values()[i] -= 0.7;
      if (in.query_seeds.defined()) {
        pert.query_seeds = in.query_seeds.clone();
        const std::size_t w = in.query_seeds.dim(1);
        for (std::size_t i = t * w; i < steps * w; ++i) pert.query_seeds.mutable_values()[i] += 0.3;
      }
      AgentState s1 = core->initial_state(), s2 = core->initial_state();
      const auto a = core->unroll(in, s1);
      const auto b = core->unroll(pert, s2);
      bool ok = true;
      for (std::size_t i = 0; i < t * 3; ++i) ok = ok && a.policy_logits[i] == b.policy_logits[i];
      for (std::size_t i = 0; i < t; ++i) ok = ok && a.baseline[i] == b.baseline[i];
      if (!ok) {
        ++violations;
        bad = arch;
      }
    }
  }
  return {violations == 0, std::to_string(trials) + " trials over " + std::to_string(kArchs.size()) +
                               " architectures, " + std::to_string(violations) + " violations" +
                               (bad.empty() ? "" : " (last: " + bad + ")")};
}

// ---- 4. cache equivalence

Verdict criterion_cache() {
  Rng rng(505);
  double worst = 0.0;
  bool detached = true, grad_free = true;
  for (const std::string arch : {"adaptive", "divided", "joint"}) {
    auto core = make_core(small_spec(arch));
    for (int trial = 0; trial < 10; ++trial) {
      CoreInput in = random_input(*core, 10, rng);
      if (trial % 2) in.resets[3 + static_cast<std::size_t>(trial) % 5] = 1;
      {
        NoGradGuard g;
        AgentState whole = core->initial_state();
        const auto full = core->unroll(in, whole);
        AgentState st = core->initial_state();
        std::vector<Tensor> logits, values;
        for (auto [s, l] : {std::pair<std::size_t, std::size_t>{0, 4}, {4, 1}, {5, 3}, {8, 2}}) {
          const auto out = core->unroll(rows_of(in, s, l), st);
          logits.push_back(out.policy_logits);
          values.push_back(out.baseline);
        }
        worst = std::max({worst, max_abs_diff(concat(logits, 0), full.policy_logits),
                          max_abs_diff(concat(values, 0), full.baseline)});
      }
      // With gradients on: the carried state must be detached and untouched by backward.
      AgentState st = core->initial_state();
      core->unroll(rows_of(in, 0, 5), st);
      const auto second = core->unroll(rows_of(in, 5, 5), st);
      backward(add(sum(second.policy_logits), sum(second.baseline)));
      std::vector<Tensor> cached;
      if (auto* m = std::get_if<TxlMemory>(&st)) cached = m->layers;
      if (auto* f = std::get_if<FrameCache>(&st)) cached = f->layers;
      for (const auto& c : cached) {
        detached = detached && c.is_detached() && !c.requires_grad();
        grad_free = grad_free && !c.has_grad();
      }
      for (const auto& p : core->parameters()) Tensor(p.tensor).zero_grad();
    }
  }
  return {worst <= 1e-9 && detached && grad_free,
          "transformer-xl and frame cache: max chunked-vs-full diff " + fmt(worst) +
              (detached ? ", cache detached" : ", CACHE ATTACHED") + (grad_free ? ", no cache gradients" : ", CACHE GOT GRADIENTS")};
}

// ---- 5. comparison counts

Verdict criterion_counts() {
  const auto rows = bench_attention({4, 9, 16, 25}, {2, 4, 8, 16}, 16, 4, 7, 5);
  bool law = rows.size() == 16;
  bool order = true;
  std::size_t timed = 0;
  for (const auto& r : rows) {
    law = law && r.divided_count == r.tokens * (r.tokens + r.frames) && r.joint_count == r.tokens * r.tokens * r.frames;
    if (r.tokens >= 16 && r.frames >= 8) {
      ++timed;
      order = order && r.divided_ms < r.joint_ms;
    }
  }
  const auto nine = bench_attention({9}, {4}, 16, 4, 1);
  law = law && nine[0].divided_count == 117 && nine[0].joint_count == 324;
  std::string timing;
  for (const auto& r : rows)
    if (r.tokens >= 16 && r.frames >= 8)
      timing += " N" + std::to_string(r.tokens) + "F" + std::to_string(r.frames) + " " + fmt(r.divided_ms) + "/" +
                fmt(r.joint_ms) + "ms";
  return {law && order && timed == 4,
          std::string(law ? "count law exact on 4x4 grid" : "COUNT LAW BROKEN") + "; divided/joint" + timing};
}

// ---- 6. toy training

Verdict criterion_training() {
  std::string detail;
  bool all = true;
  for (const auto& [arch, budget] : {std::pair<std::string, std::uint64_t>{"adaptive", 200000}, {"divided", 400000}}) {
    bool reached = false;
    for (std::uint64_t seed : {0, 1, 2}) {
      Config cfg = parse_config({{"arch", arch}, {"seed", std::to_string(seed)}, {"mode", "sequential"}});
      cfg.total_steps = budget;
      auto core = make_core(core_spec(cfg));
      const auto t0 = std::chrono::steady_clock::now();
      std::uint64_t hit = 0;
      double best = -1.0;
      const auto r = run_training(*core, pipeline_config(cfg), [&](const MetricsRow& m) {
        if (m.episodes >= cfg.metrics_window) best = std::max(best, m.mean_return_100);
        if (m.episodes >= cfg.metrics_window && m.mean_return_100 >= 0.9) {
          hit = m.step;
          return false;
        }
        return true;
      });
      std::cout << "  [6] " << arch << " seed " << seed << ": "
                << (hit ? "reached 0.9 at step " + std::to_string(hit) : "best " + fmt(best) + " in " + std::to_string(r.steps) + " steps")
                << " (" << fmt(seconds_since(t0)) << " s)" << std::endl;
      if (hit && hit <= budget) {
        detail += arch + " seed " + std::to_string(seed) + " at " + std::to_string(hit) + " steps; ";
        reached = true;
        break;
      }
    }
    if (!reached) detail += arch + " did not reach 0.9 within " + std::to_string(budget) + "; ";
    all = all && reached;
  }
  return {all, detail};
}

// ---- 7. Mott math

Verdict criterion_mott() {
  Rng rng(707);
  double worst = 0.0;
  std::uniform_int_distribution<std::size_t> width(1, 6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = width(rng), heads = 1 + static_cast<std::size_t>(trial) % 3, lv = width(rng);
    const Tensor keys = random_tensor({3, 3, c}, rng, -2, 2, false);
    const Tensor queries = random_tensor({heads, c}, rng, -2, 2, false);
    const Tensor values = random_tensor({3, 3, lv}, rng, -2, 2, false);
    const Tensor maps = spatial_attention(keys, queries);
    const Tensor ans = answer_vectors(maps, values);
    for (std::size_t n = 0; n < heads; ++n) {
      double z = 0.0;
      std::vector<double> e(9);
      for (std::size_t cell = 0; cell < 9; ++cell) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) s += queries[n * c + k] * keys[cell * c + k];
        e[cell] = std::exp(s);
        z += e[cell];
      }
      for (std::size_t cell = 0; cell < 9; ++cell) worst = std::max(worst, std::abs(maps[n * 9 + cell] - e[cell] / z));
      for (std::size_t k = 0; k < lv; ++k) {
        double a = 0.0;
        for (std::size_t cell = 0; cell < 9; ++cell) a += e[cell] / z * values[cell * lv + k];
        worst = std::max(worst, std::abs(ans[n * lv + k] - a));
      }
    }
  }
  const Tensor basis = build_spatial_basis(9, 9, 4, 4);
  const bool channels = basis.dim(2) == 64;
  return {worst <= 1e-12 && channels,
          "100 random 3x3xc cases, max err " + fmt(worst) + "; basis channels at U=V=4: " + std::to_string(basis.dim(2))};
}

// ---- 8. saliency

Verdict criterion_saliency() {
  Rng rng(808);
  const Tensor frame = random_tensor({2, 20, 20}, rng, 0, 255, false);
  // An input-blind real core: zeroed heads.
  CoreSpec spec = small_spec("mott");
  spec.height = spec.width = 20;
  spec.vision_widths = {3, 4};
  auto core = make_core(spec);
  auto& mott = dynamic_cast<MottCore&>(*core);
  mott.policy.zero();
  mott.value.zero();
  const Evaluator blind = core_evaluator(*core, core->initial_state(), 0.0, Tensor({3}, 0.0));
  double blind_max = 0.0;
  for (auto mode : {SaliencyMode::policy, SaliencyMode::value}) {
    SaliencyOptions o;
    o.mode = mode;
    const Tensor scores = saliency_scores(blind, frame, o);
    for (double v : scores.values()) blind_max = std::max(blind_max, std::abs(v));
  }
  // A constructed core that reads pixel (2,3) of the newest frame.
  const Evaluator one = [](const Tensor& f) {
    const double p = f[1 * 400 + 2 * 20 + 3];
    return Evaluation{{0.01 * p, -0.02 * p, 0.0}, 0.03 * p};
  };
  double far = 0.0;
  for (auto mode : {SaliencyMode::policy, SaliencyMode::value}) {
    SaliencyOptions o;
    o.mode = mode;
    const Heatmap h = saliency_map(one, frame, o);
    std::size_t best = 0;
    for (std::size_t i = 1; i < h.values.numel(); ++i)
      if (h.values[i] > h.values[best]) best = i;
    far = std::max(far, std::hypot(double(best / 20) - 2.0, double(best % 20) - 3.0));
  }
  const SaliencyOptions defaults;
  const bool defaults_ok = defaults.sigma_blur == 3.0 && defaults.sigma_mask == 5.0 && defaults.stride == 5;
  return {blind_max == 0.0 && far <= defaults.sigma_mask && defaults_ok,
          "blind core max saliency " + fmt(blind_max) + "; one-pixel argmax distance " + fmt(far) +
              " (sigma 5); defaults sigma_A=" + fmt(defaults.sigma_blur) + " sigma=" + fmt(defaults.sigma_mask)};
}

// ---- 9. pipeline

Verdict criterion_pipeline() {
  CoreSpec spec;
  spec.arch = "adaptive";
  spec.in_channels = 2;
  spec.vision_widths = {2, 4};
  spec.shrink = 8;
  spec.d_model = 8;
  spec.heads = 2;
  spec.mem_len = 8;
  spec.max_pos = 32;
  PipelineConfig cfg;
  cfg.num_actors = 4;
  cfg.batch_size = 2;
  cfg.num_buffers = 7;
  cfg.unroll_length = 3;
  cfg.chunk_size = 0;
  cfg.frame_stack = 2;
  cfg.mode = PipelineConfig::Mode::threaded;
  cfg.total_steps = 2600 * 3;  // 2600 buffers, 4 transfers each
  auto core = make_core(spec);
  auto fut = std::async(std::launch::async, [&] { return run_training(*core, cfg); });
  if (fut.wait_for(std::chrono::minutes(10)) != std::future_status::ready)
    return {false, "no progress within 10 minutes (deadlock?)"};
  const TrainingResult r = fut.get();
  bool increasing = !r.published_versions.empty();
  for (std::size_t i = 0; i < r.published_versions.size(); ++i)
    increasing = increasing && r.published_versions[i] == i + 1;
  const bool ok = r.transfers >= 10000 && r.audit.empty() && r.actor_errors.empty() && increasing &&
                  r.stale_consumptions > 0;
  return {ok, std::to_string(r.transfers) + " transfers, 4 actors, audit " + (r.audit.empty() ? "clean" : r.audit) +
                  ", versions " + (increasing ? "strictly increasing" : "NOT increasing") + ", " +
                  std::to_string(r.stale_consumptions) + " stale consumptions, " + fmt(r.elapsed_seconds) + " s"};
}

// ---- 10. formats

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Verdict criterion_formats() {
  const fs::path dir = fs::temp_directory_path() / "attnrl_acceptance";
  fs::create_directories(dir);
  const fs::path golden = ATTNRL_GOLDEN_DIR;
  write_image(RgbImage{1, 1, {255, 255, 255}}, dir / "white.ppm");
  write_image(RgbImage{1, 2, {255, 0, 0, 0, 255, 0}}, dir / "rg.ppm");
  write_image(GrayImage{2, 2, {0, 0x40, 0x80, 0xff}}, dir / "g.pgm");
  const bool images = file_bytes(dir / "white.ppm") == file_bytes(golden / "white_1x1.ppm") &&
                      file_bytes(dir / "rg.ppm") == file_bytes(golden / "red_green_2x1.ppm") &&
                      file_bytes(dir / "g.pgm") == file_bytes(golden / "gray_2x2.pgm") &&
                      file_bytes(dir / "white.ppm") == std::string("P6\n1 1\n255\n\xff\xff\xff", 14);

  double worst = 0.0;
  for (const auto& arch : kArchs) {
    auto a = make_core(small_spec(arch));
    CoreSpec other = small_spec(arch);
    other.seed = 77;
    auto b = make_core(other);
    save_checkpoint(a->parameters(), dir / "m.ckpt");
    load_checkpoint(b->parameters(), dir / "m.ckpt");
    const auto pa = a->parameters(), pb = b->parameters();
    for (std::size_t i = 0; i < pa.size(); ++i)
      for (std::size_t k = 0; k < pa[i].tensor.numel(); ++k) {
        const double x = pa[i].tensor[k];
        if (x != 0.0) worst = std::max(worst, std::abs(pb[i].tensor[k] - x) / std::abs(x));
        else worst = std::max(worst, std::abs(pb[i].tensor[k]));
      }
  }
  const bool header = std::string(kMetricsHeader) ==
                      "step,episodes,mean_return_100,mean_length_100,sps,loss_pg,loss_baseline,loss_entropy,"
                      "parameter_count,inference_ms";
  std::ostringstream csv;
  write_metrics_csv(csv, {MetricsRow{}});
  const bool csv_line = csv.str().rfind(std::string(kMetricsHeader) + "\n", 0) == 0;
  return {images && worst <= 1e-6 && header && csv_line,
          std::string("PPM/PGM golden bytes ") + (images ? "match" : "DIFFER") + "; checkpoint max rel err " +
              fmt(worst) + "; CSV header " + (header && csv_line ? "exact" : "WRONG")};
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, skip;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--only") only = parse_list(argv[i + 1]);
    else if (flag == "--skip") skip = parse_list(argv[i + 1]);
    else {
      std::cerr << "usage: acceptance [--only 1,2,...] [--skip 6]\n";
      return 2;
    }
  }
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient suite", criterion_gradients},   {"v-trace oracle", criterion_vtrace},
      {"causality", criterion_causality},        {"cache equivalence", criterion_cache},
      {"comparison-count law", criterion_counts}, {"toy training", criterion_training},
      {"mott math oracle", criterion_mott},      {"saliency sanity", criterion_saliency},
      {"pipeline soundness", criterion_pipeline}, {"formats", criterion_formats},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if ((!only.empty() && !only.count(id)) || skip.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << "criterion " << id << " " << (v.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
              << v.detail << std::endl;
  }
  return failed ? 1 : 0;
}

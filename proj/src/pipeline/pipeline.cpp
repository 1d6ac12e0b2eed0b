// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "attnrl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <thread>

namespace attnrl {

RolloutBuffer::RolloutBuffer(std::size_t rows_, Shape obs_shape_, std::size_t num_actions_, std::size_t seed_width_)
    : rows(rows_), obs_shape(std::move(obs_shape_)), num_actions(num_actions_), seed_width(seed_width_) {
  observation.assign(rows * obs_numel(), 0);
  reward.assign(rows, 0.0);
  done.assign(rows, 0);
  policy_logits.assign(rows * num_actions, 0.0);
  baseline.assign(rows, 0.0);
  actions.assign(rows, 0);
  query_seeds.assign(rows * seed_width, 0.0);
  prev_logits0.assign(num_actions, 0.0);
}

// ---- IndexQueue

void IndexQueue::push(std::size_t index) {
  {
    std::lock_guard lock(mu_);
    items_.push_back(index);
  }
  cv_.notify_one();
}

std::optional<std::size_t> IndexQueue::pop() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return closed_ || !items_.empty(); });
  if (closed_) return std::nullopt;
  const std::size_t v = items_.front();
  items_.pop_front();
  return v;
}

std::optional<std::size_t> IndexQueue::try_pop() {
  std::lock_guard lock(mu_);
  if (closed_ || items_.empty()) return std::nullopt;
  const std::size_t v = items_.front();
  items_.pop_front();
  return v;
}

std::optional<std::size_t> IndexQueue::pop_for(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  if (!cv_.wait_for(lock, timeout, [&] { return closed_ || !items_.empty(); }) || closed_) return std::nullopt;
  const std::size_t v = items_.front();
  items_.pop_front();
  return v;
}

void IndexQueue::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool IndexQueue::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

std::size_t IndexQueue::size() const {
  std::lock_guard lock(mu_);
  return items_.size();
}

std::vector<std::size_t> IndexQueue::contents() const {
  std::lock_guard lock(mu_);
  return {items_.begin(), items_.end()};
}

// ---- OwnershipLedger

OwnershipLedger::OwnershipLedger(std::size_t num_buffers) : owners_(num_buffers) {}

namespace {

std::string describe(OwnershipLedger::Owner o) {
  switch (o.place) {
    case OwnershipLedger::Place::free_queue: return "free queue";
    case OwnershipLedger::Place::full_queue: return "full queue";
    case OwnershipLedger::Place::learner: return "learner";
    case OwnershipLedger::Place::actor: return "actor " + std::to_string(o.actor);
  }
  return "?";
}

}  // namespace

void OwnershipLedger::transfer(std::size_t index, Owner from, Owner to) {
  std::lock_guard lock(mu_);
  if (index >= owners_.size()) throw ContractError("ledger: buffer index " + std::to_string(index) + " out of range");
  if (!(owners_[index] == from)) {
    throw ContractError("ledger: buffer " + std::to_string(index) + " is held by " + describe(owners_[index]) +
                        ", not " + describe(from));
  }
  owners_[index] = to;
  ++transfers_;
}

OwnershipLedger::Owner OwnershipLedger::owner(std::size_t index) const {
  std::lock_guard lock(mu_);
  return owners_.at(index);
}

std::uint64_t OwnershipLedger::transfers() const {
  std::lock_guard lock(mu_);
  return transfers_;
}

std::string OwnershipLedger::audit(const IndexQueue& free_queue, const IndexQueue& full_queue) const {
  std::lock_guard lock(mu_);
  std::vector<int> seen(owners_.size(), 0);
  std::string problems;
  auto check_queue = [&](const IndexQueue& q, Place place) {
    for (std::size_t i : q.contents()) {
      if (i >= owners_.size()) {
        problems += "index " + std::to_string(i) + " out of range; ";
        continue;
      }
      ++seen[i];
      if (owners_[i].place != place) problems += "index " + std::to_string(i) + " queued but owned elsewhere; ";
    }
  };
  check_queue(free_queue, Place::free_queue);
  check_queue(full_queue, Place::full_queue);
  for (std::size_t i = 0; i < owners_.size(); ++i) {
    const bool queued = owners_[i].place == Place::free_queue || owners_[i].place == Place::full_queue;
    if (queued && seen[i] != 1)
      problems += "index " + std::to_string(i) + " appears " + std::to_string(seen[i]) + " times in its queue; ";
    if (!queued && seen[i] != 0) problems += "index " + std::to_string(i) + " held and queued at once; ";
  }
  return problems;
}

std::unique_ptr<BufferPool> create_buffers(std::size_t num_buffers, std::size_t rows, const Shape& obs_shape,
                                           std::size_t num_actions, std::size_t seed_width,
                                           std::size_t batch_size, std::size_t num_actors) {
  if (num_buffers < batch_size + num_actors) {
    throw ContractError("num_buffers: " + std::to_string(num_buffers) + " is less than batch_size + num_actors = " +
                        std::to_string(batch_size + num_actors));
  }
  auto pool = std::make_unique<BufferPool>(num_buffers);
  pool->buffers.reserve(num_buffers);
  for (std::size_t i = 0; i < num_buffers; ++i) {
    pool->buffers.emplace_back(rows, obs_shape, num_actions, seed_width);
    pool->free_queue.push(i);
  }
  return pool;
}

// ---- Snapshots

ParameterSnapshot take_snapshot(const PolicyCore& core, std::uint64_t version) {
  ParameterSnapshot s;
  s.version = version;
  for (const auto& p : core.parameters()) s.values.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return s;
}

void load_snapshot(const ParameterSnapshot& snap, PolicyCore& core) {
  ParamList params = core.parameters();
  if (params.size() != snap.values.size()) throw ContractError("snapshot: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_values();
    if (dst.size() != snap.values[i].size()) throw DimensionError("snapshot: size mismatch for " + params[i].name);
    std::copy(snap.values[i].begin(), snap.values[i].end(), dst.begin());
  }
}

void SnapshotSlot::publish(std::shared_ptr<const ParameterSnapshot> snap) {
  std::lock_guard lock(mu_);
  snap_ = std::move(snap);
}

std::shared_ptr<const ParameterSnapshot> SnapshotSlot::latest() const {
  std::lock_guard lock(mu_);
  return snap_;
}

// ---- Config

void validate(const PipelineConfig& c) {
  auto positive = [](std::uint64_t v, const char* key) {
    if (v == 0) throw ContractError(std::string(key) + ": must be positive");
  };
  positive(c.total_steps, "total_steps");
  positive(c.unroll_length, "unroll_length");
  positive(c.num_actors, "num_actors");
  positive(c.batch_size, "batch_size");
  positive(c.frame_stack, "frame_stack");
  positive(c.metrics_window, "metrics_window");
  if (c.chunk_size != 0 && (c.unroll_length + 1) % c.chunk_size != 0) {
    throw ContractError("chunk_size: " + std::to_string(c.chunk_size) + " does not divide the " +
                        std::to_string(c.unroll_length + 1) + " rows of an unroll (unroll_length + 1)");
  }
  if (c.num_buffers < c.batch_size + c.num_actors) {
    throw ContractError("num_buffers: " + std::to_string(c.num_buffers) + " is less than batch_size + num_actors = " +
                        std::to_string(c.batch_size + c.num_actors));
  }
  if (!(c.rho_bar >= c.c_bar) || !(c.c_bar > 0)) throw ContractError("rho_bar: needs rho_bar >= c_bar > 0");
  if (!(c.gamma >= 0 && c.gamma <= 1)) throw ContractError("gamma: must lie in [0, 1]");
  if (!(c.learning_rate >= 0)) throw ContractError("learning_rate: must be non-negative");
  if (c.env != "catch" && c.env != "minipong") throw ContractError("env: unknown environment '" + c.env + "'");
}

// ---- Adam

Adam::Adam(double lr, double beta1, double beta2, double eps, double clip)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), clip_(clip) {}

double Adam::step(const ParamList& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ContractError("adam: parameter list changed between steps");
  double sq = 0.0;
  for (const auto& p : params)
    if (p.tensor.has_grad())
      for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  const double scale = (clip_ > 0 && norm > clip_) ? clip_ / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor w = params[i].tensor;
    if (!w.has_grad()) continue;
    auto g = w.grad();
    auto x = w.mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double gk = g[k] * scale;
      m[k] = beta1_ * m[k] + (1 - beta1_) * gk;
      v[k] = beta2_ * v[k] + (1 - beta2_) * gk * gk;
      x[k] -= lr_ * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
    }
    w.zero_grad();
  }
  return norm;
}

// ---- Buffer views

double decode_pixel(std::uint8_t byte, bool rescale) {
  return rescale ? static_cast<double>(byte) / 255.0 : static_cast<double>(byte);
}

CoreInput buffer_core_input(const RolloutBuffer& buf, std::size_t start, std::size_t len, bool rescale) {
  if (start + len > buf.rows) throw DimensionError("buffer: rows out of range");
  const std::size_t n = buf.obs_numel();
  const std::size_t a = buf.num_actions;
  Shape frame_shape{len};
  frame_shape.insert(frame_shape.end(), buf.obs_shape.begin(), buf.obs_shape.end());
  std::vector<double> frames(len * n);
  for (std::size_t i = 0; i < len * n; ++i) frames[i] = decode_pixel(buf.observation[start * n + i], rescale);

  CoreInput in;
  in.frames = Tensor(frame_shape, std::move(frames));
  in.prev_reward.resize(len);
  std::vector<double> prev(len * a, 0.0);
  in.resets.resize(len);
  for (std::size_t i = 0; i < len; ++i) {
    const std::size_t t = start + i;
    in.resets[i] = buf.done[t];
    if (buf.done[t]) continue;
    in.prev_reward[i] = buf.reward[t];
    const double* src = t == 0 ? buf.prev_logits0.data() : buf.policy_logits.data() + (t - 1) * a;
    std::copy(src, src + a, prev.begin() + i * a);
  }
  in.prev_logits = Tensor({len, a}, std::move(prev));
  if (buf.seed_width > 0) {
    const auto first = buf.query_seeds.begin() + static_cast<std::ptrdiff_t>(start * buf.seed_width);
    in.query_seeds = Tensor({len, buf.seed_width}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(len * buf.seed_width)));
  }
  return in;
}

// ---- Actor

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(salt)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

std::size_t sample_action(std::span<const double> logits, std::mt19937_64& rng) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(logits[i] - top);
  return std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
}

void copy_row(const RolloutBuffer& from, std::size_t r, RolloutBuffer& to, std::size_t s) {
  const std::size_t n = from.obs_numel(), a = from.num_actions, w = from.seed_width;
  std::copy_n(from.observation.begin() + r * n, n, to.observation.begin() + s * n);
  to.reward[s] = from.reward[r];
  to.done[s] = from.done[r];
  std::copy_n(from.policy_logits.begin() + r * a, a, to.policy_logits.begin() + s * a);
  to.baseline[s] = from.baseline[r];
  to.actions[s] = from.actions[r];
  std::copy_n(from.query_seeds.begin() + r * w, w, to.query_seeds.begin() + s * w);
}

void write_obs(RolloutBuffer& buf, std::size_t row, const Tensor& stack) {
  const std::size_t n = buf.obs_numel();
  if (stack.numel() != n) throw DimensionError("actor: observation size " + std::to_string(stack.numel()) +
                                               " does not match buffer " + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double v = std::clamp(std::round(stack[i]), 0.0, 255.0);
    buf.observation[row * n + i] = static_cast<std::uint8_t>(v);
  }
}

}  // namespace

Actor::Actor(std::size_t id, const CoreSpec& spec, const PipelineConfig& cfg)
    : id_(id),
      cfg_(cfg),
      core_(make_core(spec)),
      env_(make_env(cfg.env, mix_seed(cfg.seed, id, 1))),
      pre_(spec.height, spec.width, cfg.frame_stack, false),
      rng_(mix_seed(cfg.seed, id, 2)) {
  if (spec.in_channels != cfg.frame_stack)
    throw ContractError("frame_stack: " + std::to_string(cfg.frame_stack) + " frames but the core expects " +
                        std::to_string(spec.in_channels) + " input channels");
  if (env_->num_actions() != spec.num_actions)
    throw ContractError("env: " + cfg.env + " has " + std::to_string(env_->num_actions()) + " actions, core " +
                        std::to_string(spec.num_actions));
}

void Actor::refresh(const SnapshotSlot& slot) {
  auto snap = slot.latest();
  if (snap && (snap->version > version_ || !started_)) {
    load_snapshot(*snap, *core_);
    version_ = snap->version;
  }
}

double Actor::mean_inference_ms() const {
  return inference_steps_ ? 1000.0 * inference_seconds_ / static_cast<double>(inference_steps_) : 0.0;
}

void Actor::act_row(RolloutBuffer& buf, std::size_t row) {
  NoGradGuard guard;
  const CoreInput in = buffer_core_input(buf, row, 1, cfg_.rescale_images);
  state_before_last_ = state_;
  const auto t0 = std::chrono::steady_clock::now();
  CoreOutput out = core_->act(in, state_);
  inference_seconds_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ++inference_steps_;
  const std::size_t a = buf.num_actions;
  auto logits = out.policy_logits.values();
  std::copy(logits.begin(), logits.end(), buf.policy_logits.begin() + row * a);
  buf.baseline[row] = out.baseline[0];
  buf.actions[row] = sample_action(logits, rng_);
  if (buf.seed_width > 0) {
    auto s = out.query_seeds.values();
    std::copy(s.begin(), s.end(), buf.query_seeds.begin() + row * buf.seed_width);
  }
}

void Actor::start() {
  const std::size_t w = core_->needs_query_seeds() ? core_->query_seed_width() : 0;
  Shape obs{cfg_.frame_stack, core_->spec().height, core_->spec().width};
  last_ = RolloutBuffer(1, obs, core_->spec().num_actions, w);
  pre_.reset();
  write_obs(last_, 0, pre_.push(env_->reset()));
  last_.done[0] = 1;
  state_ = core_->initial_state();
  act_row(last_, 0);
  episode_return_ = 0.0;
  episode_length_ = 0;
  started_ = true;
}

void Actor::fill(RolloutBuffer& buf) {
  if (!started_) start();
  if (buf.obs_shape != last_.obs_shape || buf.num_actions != last_.num_actions || buf.seed_width != last_.seed_width)
    throw DimensionError("actor: buffer layout does not match the core");
  const std::size_t rows = buf.rows;
  buf.episodes.clear();
  buf.initial_state = state_before_last_;
  buf.prev_logits0 = last_.prev_logits0;
  copy_row(last_, 0, buf, 0);
  for (std::size_t t = 1; t < rows; ++t) {
    StepResult r = env_->step(buf.actions[t - 1]);
    episode_return_ += r.reward;
    ++episode_length_;
    Tensor frame = std::move(r.frame);
    if (r.done) {
      buf.episodes.push_back({episode_return_, episode_length_});
      episode_return_ = 0.0;
      episode_length_ = 0;
      frame = env_->reset();
      pre_.reset();
    }
    write_obs(buf, t, pre_.push(frame));
    buf.reward[t] = r.reward;
    buf.done[t] = r.done ? 1 : 0;
    act_row(buf, t);
  }
  copy_row(buf, rows - 1, last_, 0);
  const std::size_t a = buf.num_actions;
  if (rows >= 2)
    std::copy_n(buf.policy_logits.begin() + (rows - 2) * a, a, last_.prev_logits0.begin());
  else
    last_.prev_logits0 = buf.prev_logits0;
  buf.snapshot_version = version_;
  buf.actor_id = id_;
}

// ---- Learner

std::pair<Tensor, Tensor> learner_forward(const PolicyCore& core, const RolloutBuffer& buf, std::size_t chunk_size,
                                          bool rescale) {
  const std::size_t chunk = chunk_size == 0 ? buf.rows : chunk_size;
  if (buf.rows % chunk != 0)
    throw ContractError("chunk_size: " + std::to_string(chunk) + " does not divide " + std::to_string(buf.rows) + " rows");
  AgentState state = buf.initial_state;
  std::vector<Tensor> logits, values;
  for (std::size_t s = 0; s < buf.rows; s += chunk) {
    CoreOutput out = core.unroll(buffer_core_input(buf, s, chunk, rescale), state);
    logits.push_back(out.policy_logits);
    values.push_back(out.baseline);
  }
  if (logits.size() == 1) return {logits[0], values[0]};
  return {concat(logits, 0), concat(values, 0)};
}

vtrace::Trajectory buffer_trajectory(const RolloutBuffer& buf, const Tensor& logits, const Tensor& baseline) {
  if (buf.rows < 2) throw ContractError("buffer: needs at least 2 rows for a transition");
  const std::size_t t = buf.rows - 1, a = buf.num_actions;
  vtrace::Trajectory tr;
  tr.behaviour_logits =
      Tensor({t, a}, std::vector<double>(buf.policy_logits.begin(), buf.policy_logits.begin() + static_cast<std::ptrdiff_t>(t * a)));
  tr.target_logits = slice(logits, 0, 0, t);
  tr.actions.assign(buf.actions.begin(), buf.actions.begin() + static_cast<std::ptrdiff_t>(t));
  tr.rewards.assign(buf.reward.begin() + 1, buf.reward.end());
  tr.dones.assign(buf.done.begin() + 1, buf.done.end());
  tr.values = slice(baseline, 0, 0, t);
  tr.bootstrap = baseline[t];
  return tr;
}

LearnerStats learner_losses(const PolicyCore& core, const std::vector<const RolloutBuffer*>& batch,
                            const PipelineConfig& cfg) {
  LearnerStats stats;
  for (const RolloutBuffer* buf : batch) {
    auto [logits, baseline] = learner_forward(core, *buf, cfg.chunk_size, cfg.rescale_images);
    const vtrace::Trajectory tr = buffer_trajectory(*buf, logits, baseline);
    const auto w = vtrace::truncated_is_weights(tr, cfg.rho_bar, cfg.c_bar);
    const auto targets = vtrace::vtrace_targets(tr, cfg.gamma, w.rho, w.c);
    const auto l = vtrace::actor_critic_losses(targets, tr, {cfg.baseline_coef, cfg.entropy_coef});
    stats.loss_pg += l.pg.item();
    stats.loss_baseline += l.baseline.item();
    stats.loss_entropy += l.entropy.item();
    stats.loss_total += l.total.item();
    backward(l.total);
  }
  return stats;
}

LearnerStats learner_step(PolicyCore& core, Adam& opt, const std::vector<const RolloutBuffer*>& batch,
                          const PipelineConfig& cfg) {
  const ParamList params = core.parameters();
  for (const auto& p : params) Tensor(p.tensor).zero_grad();
  LearnerStats stats = learner_losses(core, batch, cfg);
  stats.grad_norm = opt.step(params);
  return stats;
}

// ---- Training loop

namespace {

using Owner = OwnershipLedger::Owner;
using Place = OwnershipLedger::Place;

struct Shared {
  const PipelineConfig& cfg;
  std::unique_ptr<BufferPool> pool;
  SnapshotSlot slot;

  Shared(const PipelineConfig& c, const PolicyCore& core) : cfg(c) {
    const std::size_t w = core.needs_query_seeds() ? core.query_seed_width() : 0;
    pool = create_buffers(c.num_buffers, c.unroll_length + 1, {c.frame_stack, core.spec().height, core.spec().width},
                          core.spec().num_actions, w, c.batch_size, c.num_actors);
  }
};

class Learner {
 public:
  Learner(PolicyCore& core, Shared& shared, const std::vector<std::unique_ptr<Actor>>& actors,
          TrainingResult& result, const MetricsCallback& on_row)
      : core_(core),
        shared_(shared),
        actors_(actors),
        result_(result),
        on_row_(on_row),
        opt_(shared.cfg.learning_rate, 0.9, 0.999, 1e-8, shared.cfg.grad_clip),
        window_(shared.cfg.metrics_window),
        param_count_(parameter_count(core.parameters())),
        start_(std::chrono::steady_clock::now()) {}

  // Consumes one batch of indices. Returns false when training is over.
  bool consume(const std::vector<std::size_t>& idx) {
    std::vector<const RolloutBuffer*> batch;
    for (std::size_t i : idx) {
      shared_.pool->ledger.transfer(i, {Place::full_queue, 0}, {Place::learner, 0});
      const RolloutBuffer& b = shared_.pool->buffers[i];
      if (b.snapshot_version < version_) ++result_.stale_consumptions;
      result_.consumed_versions.push_back(b.snapshot_version);
      for (const auto& e : b.episodes) window_.add(e.ret, e.length);
      steps_ += b.rows - 1;
      batch.push_back(&b);
    }
    const LearnerStats s = learner_step(core_, opt_, batch, shared_.cfg);
    ++version_;
    result_.published_versions.push_back(version_);
    shared_.slot.publish(std::make_shared<const ParameterSnapshot>(take_snapshot(core_, version_)));
    for (std::size_t i : idx) {
      shared_.pool->ledger.transfer(i, {Place::learner, 0}, {Place::free_queue, 0});
      shared_.pool->free_queue.push(i);
    }
    MetricsRow row;
    row.step = steps_;
    row.episodes = window_.total_episodes();
    row.mean_return_100 = window_.mean_return();
    row.mean_length_100 = window_.mean_length();
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    row.sps = steps_per_second(steps_, elapsed);
    row.loss_pg = s.loss_pg;
    row.loss_baseline = s.loss_baseline;
    row.loss_entropy = s.loss_entropy;
    row.parameter_count = param_count_;
    double ms = 0.0;
    std::uint64_t n = 0;
    for (const auto& a : actors_) {
      ms += a->mean_inference_ms() * static_cast<double>(a->inference_steps());
      n += a->inference_steps();
    }
    row.inference_ms = n ? ms / static_cast<double>(n) : 0.0;
    result_.rows.push_back(row);
    result_.steps = steps_;
    result_.updates = version_;
    if (on_row_ && !on_row_(row)) {
      result_.stopped_early = true;
      return false;
    }
    return steps_ < shared_.cfg.total_steps;
  }

 private:
  PolicyCore& core_;
  Shared& shared_;
  const std::vector<std::unique_ptr<Actor>>& actors_;
  TrainingResult& result_;
  const MetricsCallback& on_row_;
  Adam opt_;
  MetricsWindow window_;
  std::uint64_t param_count_;
  std::uint64_t version_ = 0;
  std::uint64_t steps_ = 0;
  std::chrono::steady_clock::time_point start_;
};

void actor_unroll(Actor& actor, Shared& shared, std::size_t idx) {
  shared.pool->ledger.transfer(idx, {Place::free_queue, 0}, {Place::actor, actor.id()});
  actor.refresh(shared.slot);
  actor.fill(shared.pool->buffers[idx]);
  shared.pool->ledger.transfer(idx, {Place::actor, actor.id()}, {Place::full_queue, 0});
  shared.pool->full_queue.push(idx);
}

void run_sequential(Shared& shared, std::vector<std::unique_ptr<Actor>>& actors, Learner& learner) {
  std::size_t next = 0;
  for (;;) {
    if (shared.pool->full_queue.size() >= shared.cfg.batch_size) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < shared.cfg.batch_size; ++i) idx.push_back(*shared.pool->full_queue.try_pop());
      if (!learner.consume(idx)) return;
      continue;
    }
    auto idx = shared.pool->free_queue.try_pop();
    if (!idx) throw ContractError("num_buffers: free queue ran dry");
    actor_unroll(*actors[next], shared, *idx);
    next = (next + 1) % actors.size();
  }
}

void run_threaded(Shared& shared, std::vector<std::unique_ptr<Actor>>& actors, Learner& learner,
                  TrainingResult& result) {
  std::atomic<std::size_t> alive{actors.size()};
  std::mutex err_mu;
  std::vector<std::thread> threads;
  for (auto& a : actors) {
    threads.emplace_back([&, actor = a.get()] {
      try {
        while (auto idx = shared.pool->free_queue.pop()) actor_unroll(*actor, shared, *idx);
      } catch (const std::exception& e) {
        std::lock_guard lock(err_mu);
        result.actor_errors.push_back("actor " + std::to_string(actor->id()) + ": " + e.what());
        std::cerr << "actor " << actor->id() << " stopped: " << e.what() << '\n';
      }
      --alive;
    });
  }
  try {
    for (bool more = true; more;) {
      std::vector<std::size_t> idx;
      while (idx.size() < shared.cfg.batch_size) {
        if (auto i = shared.pool->full_queue.pop_for(std::chrono::milliseconds(200))) {
          idx.push_back(*i);
        } else if (alive.load() == 0) {
          throw std::runtime_error("all actors stopped before training finished");
        }
      }
      more = learner.consume(idx);
    }
  } catch (...) {
    shared.pool->free_queue.close();
    shared.pool->full_queue.close();
    for (auto& t : threads) t.join();
    throw;
  }
  shared.pool->free_queue.close();
  shared.pool->full_queue.close();
  for (auto& t : threads) t.join();
}

}  // namespace

TrainingResult run_training(PolicyCore& core, const PipelineConfig& cfg, const MetricsCallback& on_row) {
  validate(cfg);
  TrainingResult result;
  Shared shared(cfg, core);
  shared.slot.publish(std::make_shared<const ParameterSnapshot>(take_snapshot(core, 0)));
  std::vector<std::unique_ptr<Actor>> actors;
  for (std::size_t i = 0; i < cfg.num_actors; ++i) actors.push_back(std::make_unique<Actor>(i, core.spec(), cfg));
  Learner learner(core, shared, actors, result, on_row);

  const auto t0 = std::chrono::steady_clock::now();
  const bool sequential = cfg.mode == PipelineConfig::Mode::sequential ||
                          (cfg.mode == PipelineConfig::Mode::automatic && cfg.num_actors == 1);
  if (sequential)
    run_sequential(shared, actors, learner);
  else
    run_threaded(shared, actors, learner, result);
  result.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.transfers = shared.pool->ledger.transfers();
  result.audit = shared.pool->ledger.audit(shared.pool->free_queue, shared.pool->full_queue);
  return result;
}

}  // namespace attnrl

// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Single-machine actor-learner loop. Rollout buffers move between actors and
// the learner by index through a free queue and a full queue; parameters
// move to the actors only as immutable versioned snapshots.
//
// A buffer holds unroll_length + 1 rows. Row 0 repeats the last row of the
// actor's previous buffer, so the learner sees every transition
// (row t -> row t+1) exactly once and has a bootstrap row at the end.
// done[t] marks row t as the first row of a new episode; reward[t] is the
// reward received on arriving at row t.

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "attnrl/core.hpp"
#include "attnrl/envs.hpp"
#include "attnrl/metrics.hpp"
#include "attnrl/vtrace.hpp"

namespace attnrl {

struct EpisodeStat {
  double ret = 0.0;
  std::size_t length = 0;
};

struct RolloutBuffer {
  std::size_t rows = 0;
  Shape obs_shape;  // [C x H x W]
  std::size_t num_actions = 0;
  std::size_t seed_width = 0;

  std::vector<std::uint8_t> observation;  // rows x C x H x W
  std::vector<double> reward;
  std::vector<std::uint8_t> done;
  std::vector<double> policy_logits;  // rows x A
  std::vector<double> baseline;
  std::vector<std::size_t> actions;
  std::vector<double> query_seeds;  // rows x seed_width
  std::vector<double> prev_logits0;  // logits of the step before row 0
  AgentState initial_state;          // actor state before row 0
  std::uint64_t snapshot_version = 0;
  std::size_t actor_id = 0;
  std::vector<EpisodeStat> episodes;  // episodes that finished while filling

  RolloutBuffer() = default;
  RolloutBuffer(std::size_t rows, Shape obs_shape, std::size_t num_actions, std::size_t seed_width = 0);
  std::size_t obs_numel() const { return shape_numel(obs_shape); }
};

// Blocking FIFO of buffer indices. After close(), pops return nothing.
class IndexQueue {
 public:
  void push(std::size_t index);
  std::optional<std::size_t> pop();
  std::optional<std::size_t> try_pop();
  // Waits up to `timeout`; nothing on timeout or close.
  std::optional<std::size_t> pop_for(std::chrono::milliseconds timeout);
  void close();
  bool closed() const;
  std::size_t size() const;
  std::vector<std::size_t> contents() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::size_t> items_;
  bool closed_ = false;
};

// Who holds each buffer index. Every transfer is checked against the
// recorded owner, so a double hand-off throws immediately.
class OwnershipLedger {
 public:
  enum class Place : std::uint8_t { free_queue, actor, full_queue, learner };
  struct Owner {
    Place place = Place::free_queue;
    std::size_t actor = 0;
    bool operator==(const Owner&) const = default;
  };

  explicit OwnershipLedger(std::size_t num_buffers);
  void transfer(std::size_t index, Owner from, Owner to);
  Owner owner(std::size_t index) const;
  std::uint64_t transfers() const;
  // Checks the ledger against the queue contents: every index in exactly
  // one place. Returns an empty string when consistent.
  std::string audit(const IndexQueue& free_queue, const IndexQueue& full_queue) const;

 private:
  mutable std::mutex mu_;
  std::vector<Owner> owners_;
  std::uint64_t transfers_ = 0;
};

// All rollout buffers plus the two queues; every index starts free.
struct BufferPool {
  std::vector<RolloutBuffer> buffers;
  IndexQueue free_queue;
  IndexQueue full_queue;
  OwnershipLedger ledger;

  explicit BufferPool(std::size_t num_buffers) : ledger(num_buffers) {}
};

// Rejects pools too small for batch_size + num_actors.
std::unique_ptr<BufferPool> create_buffers(std::size_t num_buffers, std::size_t rows, const Shape& obs_shape,
                                           std::size_t num_actions, std::size_t seed_width,
                                           std::size_t batch_size, std::size_t num_actors);

struct ParameterSnapshot {
  std::uint64_t version = 0;
  std::vector<std::vector<double>> values;
};

ParameterSnapshot take_snapshot(const PolicyCore& core, std::uint64_t version);
void load_snapshot(const ParameterSnapshot& snap, PolicyCore& core);

class SnapshotSlot {
 public:
  void publish(std::shared_ptr<const ParameterSnapshot> snap);
  std::shared_ptr<const ParameterSnapshot> latest() const;

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const ParameterSnapshot> snap_;
};

struct PipelineConfig {
  std::string env = "catch";
  std::uint64_t total_steps = 200000;
  std::size_t unroll_length = 239;
  std::size_t chunk_size = 80;  // 0: the whole buffer is one chunk
  std::size_t num_actors = 32;
  std::size_t num_buffers = 60;
  std::size_t batch_size = 16;
  double gamma = 0.99;
  double rho_bar = 1.0;
  double c_bar = 1.0;
  double baseline_coef = 0.5;
  double entropy_coef = 0.01;
  double learning_rate = 1e-3;
  double grad_clip = 40.0;
  std::size_t frame_stack = 4;
  bool rescale_images = false;
  std::size_t metrics_window = 100;
  std::uint64_t seed = 0;
  enum class Mode { automatic, threaded, sequential } mode = Mode::automatic;
};

// Throws ContractError naming the offending field.
void validate(const PipelineConfig& cfg);

// Adam with global gradient-norm clipping.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double clip = 40.0);
  // Applies one update from the accumulated gradients, then zeroes them.
  // Returns the gradient norm before clipping.
  double step(const ParamList& params);
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_, clip_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Decodes stored bytes: raw pixel values, or divided by 255 when rescaling.
double decode_pixel(std::uint8_t byte, bool rescale);

// Core input for rows [start, start + len) of a buffer.
CoreInput buffer_core_input(const RolloutBuffer& buf, std::size_t start, std::size_t len, bool rescale);

// One actor: its environment, preprocessor, private core copy and the
// recurrent state carried across buffers.
class Actor {
 public:
  Actor(std::size_t id, const CoreSpec& spec, const PipelineConfig& cfg);

  // Loads the snapshot when it is newer than the one in use.
  void refresh(const SnapshotSlot& slot);
  // Writes one buffer of unroll_length + 1 rows.
  void fill(RolloutBuffer& buf);

  std::size_t id() const { return id_; }
  PolicyCore& core() { return *core_; }
  std::uint64_t version() const { return version_; }
  double mean_inference_ms() const;
  std::uint64_t inference_steps() const { return inference_steps_; }

 private:
  void start();
  void act_row(RolloutBuffer& buf, std::size_t row);

  std::size_t id_;
  PipelineConfig cfg_;
  std::unique_ptr<PolicyCore> core_;
  std::unique_ptr<Env> env_;
  Preprocessor pre_;
  std::mt19937_64 rng_;
  std::uint64_t version_ = 0;
  bool started_ = false;

  // The row most recently written; it becomes row 0 of the next buffer.
  RolloutBuffer last_;
  AgentState state_;              // after the last row
  AgentState state_before_last_;  // before the last row
  double episode_return_ = 0.0;
  std::size_t episode_length_ = 0;
  double inference_seconds_ = 0.0;
  std::uint64_t inference_steps_ = 0;
};

struct LearnerStats {
  double loss_pg = 0.0;
  double loss_baseline = 0.0;
  double loss_entropy = 0.0;
  double loss_total = 0.0;
  double grad_norm = 0.0;
};

// Forward of one buffer on the learner: chunked unroll from the stored
// initial state. Returns logits [rows x A] and baseline [rows].
std::pair<Tensor, Tensor> learner_forward(const PolicyCore& core, const RolloutBuffer& buf, std::size_t chunk_size,
                                          bool rescale);

// V-trace trajectory over the rows of a buffer given learner outputs.
vtrace::Trajectory buffer_trajectory(const RolloutBuffer& buf, const Tensor& logits, const Tensor& baseline);

// Losses for a batch of buffers; gradients are accumulated into the core
// parameters (one backward per buffer). Does not update parameters.
LearnerStats learner_losses(const PolicyCore& core, const std::vector<const RolloutBuffer*>& batch,
                            const PipelineConfig& cfg);

// learner_losses plus one optimizer update.
LearnerStats learner_step(PolicyCore& core, Adam& opt, const std::vector<const RolloutBuffer*>& batch,
                          const PipelineConfig& cfg);

struct TrainingResult {
  std::vector<MetricsRow> rows;
  std::uint64_t steps = 0;
  std::uint64_t updates = 0;  // equals the final parameter version
  std::uint64_t stale_consumptions = 0;  // buffers built on an older snapshot
  std::uint64_t transfers = 0;
  std::string audit;  // empty when buffer ownership was consistent
  std::vector<std::string> actor_errors;
  double elapsed_seconds = 0.0;
  bool stopped_early = false;
  std::vector<std::uint64_t> consumed_versions;  // snapshot version per consumed buffer
  std::vector<std::uint64_t> published_versions;  // one per update, in order
};

// Called after each update; return false to stop training.
using MetricsCallback = std::function<bool(const MetricsRow&)>;

// Trains `core` in place.
TrainingResult run_training(PolicyCore& core, const PipelineConfig& cfg, const MetricsCallback& on_row = {});

}  // namespace attnrl

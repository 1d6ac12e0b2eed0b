// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>

#include "attnrl/cli.hpp"
#include "attnrl/envs.hpp"
#include "attnrl/timesformer.hpp"
#include "attnrl/viz.hpp"

namespace attnrl {
namespace fs = std::filesystem;
namespace {

// Plays one environment with a core, one act() per step, carrying the same
// per-step inputs the actors build.
class Player {
 public:
  Player(const PolicyCore& core, const Config& cfg, bool greedy)
      : core_(core),
        cfg_(cfg),
        env_(make_env(cfg.env, cfg.seed + 7919)),
        pre_(core.spec().height, core.spec().width, cfg.frame_stack, false),
        rng_(cfg.seed),
        greedy_(greedy),
        state_(core.initial_state()),
        prev_logits_({core.spec().num_actions}, 0.0) {
    obs_ = pre_.push(env_->reset());
  }

  // Network input for the current observation.
  Tensor frame() const {
    Tensor f = obs_.clone();
    if (cfg_.rescale_images)
      for (double& v : f.mutable_values()) v /= 255.0;
    return f;
  }
  // Newest stacked frame on the byte scale [H x W].
  Tensor newest() const {
    const std::size_t c = obs_.dim(0);
    return reshape(slice(obs_, 0, c - 1, 1), {obs_.dim(1), obs_.dim(2)});
  }
  const AgentState& state() const { return state_; }
  double prev_reward() const { return reset_ ? 0.0 : prev_reward_; }
  Tensor prev_logits() const { return reset_ ? Tensor({core_.spec().num_actions}, 0.0) : prev_logits_; }
  bool reset() const { return reset_; }

  // Acts on the current observation, then steps the environment. Returns
  // the core output; episode_done reports whether an episode just ended.
  CoreOutput step(bool record, bool& episode_done, double& reward) {
    NoGradGuard guard;
    const std::size_t a = core_.spec().num_actions;
    CoreInput in;
    const Tensor f = frame();
    in.frames = reshape(f, {1, f.dim(0), f.dim(1), f.dim(2)});
    in.prev_reward = {prev_reward()};
    in.prev_logits = reshape(prev_logits(), {1, a});
    in.resets = {static_cast<std::uint8_t>(reset_ ? 1 : 0)};
    const auto t0 = std::chrono::steady_clock::now();
    CoreOutput out = core_.act(in, state_, record);
    inference_s_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++inference_n_;

    auto logits = out.policy_logits.values();
    std::size_t action = 0;
    if (greedy_) {
      action = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    } else {
      const double top = *std::max_element(logits.begin(), logits.end());
      std::vector<double> w;
      for (double l : logits) w.push_back(std::exp(l - top));
      action = std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng_);
    }
    prev_logits_ = Tensor({a}, std::vector<double>(logits.begin(), logits.end()));
    StepResult r = env_->step(action);
    reward = r.reward;
    prev_reward_ = r.reward;
    episode_done = r.done;
    if (r.done) {
      pre_.reset();
      obs_ = pre_.push(env_->reset());
    } else {
      obs_ = pre_.push(r.frame);
    }
    reset_ = r.done;
    return out;
  }

  double inference_ms() const { return inference_n_ ? 1e3 * inference_s_ / static_cast<double>(inference_n_) : 0.0; }

 private:
  const PolicyCore& core_;
  Config cfg_;
  std::unique_ptr<Env> env_;
  Preprocessor pre_;
  std::mt19937_64 rng_;
  bool greedy_;
  AgentState state_;
  Tensor obs_;
  Tensor prev_logits_;
  double prev_reward_ = 0.0;
  bool reset_ = true;
  double inference_s_ = 0.0;
  std::uint64_t inference_n_ = 0;
};

fs::path numbered(const fs::path& dir, const std::string& stem, std::size_t t, const std::string& suffix) {
  std::ostringstream s;
  s << stem << std::setw(4) << std::setfill('0') << t << suffix;
  return dir / s.str();
}

void write_overlay(const Tensor& scores, const Tensor& frame, const fs::path& path, std::vector<fs::path>& written) {
  const Heatmap h = normalize_attention(resize_bilinear(scores, frame.dim(0), frame.dim(1)));
  write_image(overlay(frame, colormap(h)), path);
  written.push_back(path);
}

}  // namespace

TrainSummary train_command(const Config& cfg, const fs::path& out_dir, std::ostream& log) {
  validate(cfg);
  fs::create_directories(out_dir);
  TrainSummary summary;
  summary.metrics_csv = out_dir / "metrics.csv";
  summary.checkpoint = out_dir / "model.ckpt";
  summary.config = out_dir / "config.txt";
  {
    std::ofstream c(summary.config);
    c << format_config(cfg);
  }
  std::ofstream csv(summary.metrics_csv);
  if (!csv) throw std::runtime_error("cannot write " + summary.metrics_csv.string());
  csv << kMetricsHeader << '\n';

  auto core = make_core(core_spec(cfg));
  log << "arch " << cfg.arch << ", env " << cfg.env << ", " << parameter_count(core->parameters())
      << " parameters\n";
  std::size_t rows = 0;
  summary.result = run_training(*core, pipeline_config(cfg), [&](const MetricsRow& row) {
    csv << format_metrics_row(row) << '\n';
    csv.flush();
    if (rows++ % 20 == 0)
      log << "step " << row.step << "  episodes " << row.episodes << "  return " << row.mean_return_100 << "  sps "
          << static_cast<long>(row.sps) << '\n';
    return !(cfg.target_return > 0.0 && row.episodes >= cfg.metrics_window && row.mean_return_100 >= cfg.target_return);
  });
  save_checkpoint(core->parameters(), summary.checkpoint);
  const auto& r = summary.result;
  log << "done: " << r.steps << " steps, " << r.updates << " updates, " << r.elapsed_seconds << " s"
      << (r.stopped_early ? " (target reached)" : "") << '\n';
  return summary;
}

std::unique_ptr<PolicyCore> load_core(const Config& cfg, const fs::path& checkpoint) {
  auto core = make_core(core_spec(cfg));
  load_checkpoint(core->parameters(), checkpoint);
  return core;
}

EvalSummary evaluate(const PolicyCore& core, const Config& cfg, std::size_t episodes, bool greedy) {
  Player player(core, cfg, greedy);
  EvalSummary s;
  double ret = 0.0, total_ret = 0.0;
  std::size_t len = 0, total_len = 0;
  while (s.episodes < episodes) {
    bool done = false;
    double reward = 0.0;
    player.step(false, done, reward);
    ret += reward;
    ++len;
    if (done) {
      ++s.episodes;
      total_ret += ret;
      total_len += len;
      ret = 0.0;
      len = 0;
    }
  }
  if (s.episodes) {
    s.mean_return = total_ret / static_cast<double>(s.episodes);
    s.mean_length = static_cast<double>(total_len) / static_cast<double>(s.episodes);
  }
  s.inference_ms = player.inference_ms();
  return s;
}

std::vector<fs::path> viz_attention(const PolicyCore& core, const Config& cfg, std::size_t steps,
                                    const fs::path& out_dir) {
  const auto* ts = dynamic_cast<const TimeSformerCore*>(&core);
  if (cfg.arch == "adaptive")
    throw ContractError("arch: adaptive attends over whole-frame tokens and has no spatial maps");
  fs::create_directories(out_dir);
  Player player(core, cfg, false);
  std::vector<fs::path> written;
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor frame = player.newest();
    bool done = false;
    double reward = 0.0;
    const CoreOutput out = player.step(true, done, reward);
    if (ts) {
      const std::size_t last = core.spec().n_layer - 1;
      for (const auto& m : out.records.maps) {
        if (m.layer != last || (m.col_axis != "key_patch" && m.col_axis != "key_token")) continue;
        const Tensor tiles = tile_average(m, ts->embedder.grid_h, ts->embedder.grid_w);
        write_overlay(tiles, frame, numbered(out_dir, "frame_", t, "_head_" + std::to_string(m.head) + ".ppm"), written);
      }
    } else {
      if (out.spatial_maps.empty()) throw ContractError("arch: core produced no spatial maps");
      const Tensor& maps = out.spatial_maps.back();  // [H x h x w]
      for (std::size_t h = 0; h < maps.dim(0); ++h) {
        const Tensor head = reshape(slice(maps, 0, h, 1), {maps.dim(1), maps.dim(2)});
        write_overlay(head, frame, numbered(out_dir, "frame_", t, "_head_" + std::to_string(h) + ".ppm"), written);
      }
    }
  }
  return written;
}

std::vector<fs::path> viz_saliency(const PolicyCore& core, const Config& cfg, std::size_t steps,
                                   const fs::path& out_dir, std::size_t stride) {
  fs::create_directories(out_dir);
  Player player(core, cfg, false);
  std::vector<fs::path> written;
  for (std::size_t t = 0; t < steps; ++t) {
    const Evaluator eval =
        core_evaluator(core, player.state(), player.prev_reward(), player.prev_logits(), player.reset());
    const Tensor input = player.frame();
    const Tensor shown = player.newest();
    for (auto mode : {SaliencyMode::policy, SaliencyMode::value}) {
      SaliencyOptions opt;
      opt.mode = mode;
      opt.stride = stride;
      const Heatmap h = saliency_map(eval, input, opt);
      const fs::path p =
          numbered(out_dir, mode == SaliencyMode::policy ? "saliency_policy_" : "saliency_value_", t, ".ppm");
      write_image(overlay(shown, colormap(h)), p);
      written.push_back(p);
    }
    bool done = false;
    double reward = 0.0;
    player.step(false, done, reward);
  }
  return written;
}

std::vector<BenchRow> bench_attention(const std::vector<std::size_t>& tokens, const std::vector<std::size_t>& frames,
                                      std::size_t emb, std::size_t heads, std::size_t reps, std::uint64_t seed) {
  std::vector<BenchRow> rows;
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto random = [&](Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = u(rng);
    return Tensor(std::move(shape), std::move(v));
  };
  NoGradGuard guard;
  for (std::size_t n : tokens)
    for (std::size_t f : frames) {
      const auto divided = SpaceTimeBlock::init(SpaceTimeBlock::Scheme::divided, emb, heads, rng);
      const auto joint = SpaceTimeBlock::init(SpaceTimeBlock::Scheme::joint, emb, heads, rng);
      const Tensor now = random({n, emb});
      const Tensor cache = f > 1 ? random({f - 1, n, emb}) : Tensor();
      BenchRow row{n, f};
      ComparisonCounter cd, cj;
      divided_attention(divided, now, cache, &cd);
      joint_attention(joint, now, cache, &cj);
      row.divided_count = cd.total();
      row.joint_count = cj.total();
      auto best_ms = [&](auto&& fn) {
        double best = 1e300;
        for (std::size_t r = 0; r < reps; ++r) {
          const auto t0 = std::chrono::steady_clock::now();
          fn();
          best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        }
        return best;
      };
      row.divided_ms = best_ms([&] { divided_attention(divided, now, cache); });
      row.joint_ms = best_ms([&] { joint_attention(joint, now, cache); });
      rows.push_back(row);
    }
  return rows;
}

void print_bench(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << std::setw(5) << "N" << std::setw(5) << "F" << std::setw(12) << "divided" << std::setw(12) << "joint"
      << std::setw(14) << "divided_ms" << std::setw(12) << "joint_ms" << '\n';
  for (const auto& r : rows)
    out << std::setw(5) << r.tokens << std::setw(5) << r.frames << std::setw(12) << r.divided_count << std::setw(12)
        << r.joint_count << std::setw(14) << std::fixed << std::setprecision(4) << r.divided_ms << std::setw(12)
        << r.joint_ms << '\n';
}

}  // namespace attnrl

// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small deterministic grid games and the frame preprocessor.

#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <random>
#include <string>

#include "attnrl/tensor.hpp"

namespace attnrl {

inline constexpr double kBallPixel = 255.0;
inline constexpr double kPaddlePixel = 128.0;

struct StepResult {
  Tensor frame;  // [H x W], values in [0, 255]
  double reward = 0.0;
  bool done = false;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual Tensor reset() = 0;
  virtual StepResult step(std::size_t action) = 0;
  virtual std::size_t num_actions() const = 0;
  virtual std::size_t height() const = 0;
  virtual std::size_t width() const = 0;
  virtual std::string name() const = 0;
};

// Actions: 0 left, 1 stay, 2 right. The ball drops one row per step and the
// episode ends after `rows` steps, when the ball meets the paddle row.
class CatchEnv final : public Env {
 public:
  explicit CatchEnv(std::uint64_t seed, std::size_t rows = 10, std::size_t cols = 8);

  Tensor reset() override;
  StepResult step(std::size_t action) override;
  std::size_t num_actions() const override { return 3; }
  std::size_t height() const override { return rows_; }
  std::size_t width() const override { return cols_; }
  std::string name() const override { return "catch"; }

  std::size_t ball_row() const { return ball_row_; }
  std::size_t ball_col() const { return ball_col_; }
  std::size_t paddle_col() const { return paddle_col_; }
  std::size_t steps() const { return steps_; }
  // Places the ball directly; for tests and scripted scenarios.
  void set_state(std::size_t ball_row, std::size_t ball_col, std::size_t paddle_col, std::size_t steps);

 private:
  Tensor render() const;

  std::size_t rows_, cols_;
  std::mt19937_64 rng_;
  std::size_t ball_row_ = 0, ball_col_ = 0, paddle_col_ = 0, steps_ = 0;
  bool done_ = true;
};

// Actions: 0 up, 1 stay, 2 down. The agent paddle sits in column 0 and a
// scripted opponent in the last column tracks the ball every other step.
// The episode ends at the first point, or with reward 0 after max_steps.
class MiniPongEnv final : public Env {
 public:
  explicit MiniPongEnv(std::uint64_t seed, std::size_t size = 16, std::size_t max_steps = 400);

  Tensor reset() override;
  StepResult step(std::size_t action) override;
  std::size_t num_actions() const override { return 3; }
  std::size_t height() const override { return size_; }
  std::size_t width() const override { return size_; }
  std::string name() const override { return "minipong"; }

  struct State {
    int ball_r = 0, ball_c = 0, vel_r = 1, vel_c = 1;
    int agent = 0, opponent = 0;  // paddle centres
    std::size_t steps = 0;
  };
  const State& state() const { return s_; }
  void set_state(const State& s);
  static constexpr int kHalfLength = 1;

 private:
  Tensor render() const;
  int clamp_paddle(int centre) const;

  std::size_t size_, max_steps_;
  std::mt19937_64 rng_;
  State s_;
  bool done_ = true;
};

// Builds "catch" or "minipong".
std::unique_ptr<Env> make_env(const std::string& name, std::uint64_t seed);

// Nearest-neighbour resize plus an m-deep frame stack, oldest first.
class Preprocessor {
 public:
  Preprocessor(std::size_t out_h = 28, std::size_t out_w = 28, std::size_t depth = 4, bool rescale = false);

  // Clears the stack; the next push fills every slot with its frame.
  void reset();
  Tensor push(const Tensor& frame);  // returns [m x h x w]

  std::size_t depth() const { return depth_; }
  std::size_t out_height() const { return out_h_; }
  std::size_t out_width() const { return out_w_; }
  bool rescale() const { return rescale_; }

 private:
  std::size_t out_h_, out_w_, depth_;
  bool rescale_;
  std::deque<std::vector<double>> ring_;
};

// Nearest-neighbour resize of an [H x W] frame.
Tensor resize_nearest(const Tensor& frame, std::size_t out_h, std::size_t out_w);

}  // namespace attnrl

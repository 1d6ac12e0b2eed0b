// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "attnrl/envs.hpp"

#include <algorithm>
#include <stdexcept>

namespace attnrl {

namespace {

void check_action(std::size_t action, std::size_t n, const char* env) {
  if (action >= n)
    throw ContractError(std::string(env) + ": action " + std::to_string(action) + " outside [0, " +
                        std::to_string(n) + ")");
}

std::size_t draw(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace

// ---- Catch

CatchEnv::CatchEnv(std::uint64_t seed, std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), rng_(seed) {
  if (rows < 2 || cols < 1) throw ContractError("catch: grid must be at least 2x1");
}

Tensor CatchEnv::reset() {
  ball_row_ = 0;
  ball_col_ = draw(rng_, cols_);
  paddle_col_ = cols_ / 2;
  steps_ = 0;
  done_ = false;
  return render();
}

void CatchEnv::set_state(std::size_t ball_row, std::size_t ball_col, std::size_t paddle_col, std::size_t steps) {
  if (ball_row >= rows_ || ball_col >= cols_ || paddle_col >= cols_ || steps >= rows_)
    throw ContractError("catch: state outside the grid");
  ball_row_ = ball_row;
  ball_col_ = ball_col;
  paddle_col_ = paddle_col;
  steps_ = steps;
  done_ = false;
}

StepResult CatchEnv::step(std::size_t action) {
  check_action(action, 3, "catch");
  if (done_) throw ContractError("catch: step after episode end; call reset");
  if (action == 0 && paddle_col_ > 0) --paddle_col_;
  if (action == 2 && paddle_col_ + 1 < cols_) ++paddle_col_;
  ++steps_;
  StepResult r;
  if (steps_ >= rows_) {
    // The ball has reached the paddle row.
    ball_row_ = rows_ - 1;
    r.reward = ball_col_ == paddle_col_ ? 1.0 : -1.0;
    r.done = true;
    done_ = true;
  } else {
    ball_row_ = std::min(steps_, rows_ - 1);
  }
  r.frame = render();
  return r;
}

Tensor CatchEnv::render() const {
  Tensor f({rows_, cols_}, 0.0);
  auto v = f.mutable_values();
  v[(rows_ - 1) * cols_ + paddle_col_] = kPaddlePixel;
  v[ball_row_ * cols_ + ball_col_] = kBallPixel;
  return f;
}

// ---- MiniPong

MiniPongEnv::MiniPongEnv(std::uint64_t seed, std::size_t size, std::size_t max_steps)
    : size_(size), max_steps_(max_steps), rng_(seed) {
  if (size < 6) throw ContractError("minipong: grid must be at least 6x6");
}

int MiniPongEnv::clamp_paddle(int centre) const {
  return std::clamp(centre, kHalfLength, static_cast<int>(size_) - 1 - kHalfLength);
}

Tensor MiniPongEnv::reset() {
  const int n = static_cast<int>(size_);
  s_ = State{};
  s_.ball_r = static_cast<int>(draw(rng_, size_ - 4)) + 2;
  s_.ball_c = n / 2;
  s_.vel_r = draw(rng_, 2) ? 1 : -1;
  s_.vel_c = draw(rng_, 2) ? 1 : -1;
  s_.agent = n / 2;
  s_.opponent = n / 2;
  done_ = false;
  return render();
}

void MiniPongEnv::set_state(const State& s) {
  const int n = static_cast<int>(size_);
  if (s.ball_r < 0 || s.ball_r >= n || s.ball_c < 1 || s.ball_c > n - 2) throw ContractError("minipong: bad ball");
  if (std::abs(s.vel_r) != 1 || std::abs(s.vel_c) != 1) throw ContractError("minipong: bad velocity");
  s_ = s;
  s_.agent = clamp_paddle(s.agent);
  s_.opponent = clamp_paddle(s.opponent);
  done_ = false;
}

StepResult MiniPongEnv::step(std::size_t action) {
  check_action(action, 3, "minipong");
  if (done_) throw ContractError("minipong: step after episode end; call reset");
  const int n = static_cast<int>(size_);
  if (action == 0) s_.agent = clamp_paddle(s_.agent - 1);
  if (action == 2) s_.agent = clamp_paddle(s_.agent + 1);
  ++s_.steps;
  if (s_.steps % 2 == 0 && s_.opponent != s_.ball_r)
    s_.opponent = clamp_paddle(s_.opponent + (s_.ball_r > s_.opponent ? 1 : -1));

  // Walls reflect the vertical velocity before the move.
  if (s_.ball_r + s_.vel_r < 0 || s_.ball_r + s_.vel_r >= n) s_.vel_r = -s_.vel_r;
  s_.ball_r += s_.vel_r;
  s_.ball_c += s_.vel_c;

  StepResult r;
  auto hits = [&](int paddle) { return std::abs(s_.ball_r - paddle) <= kHalfLength; };
  if (s_.ball_c == 0) {
    if (hits(s_.agent)) {
      s_.vel_c = 1;
      s_.ball_c = 1;
    } else {
      r.reward = -1.0;
      r.done = true;
    }
  } else if (s_.ball_c == n - 1) {
    if (hits(s_.opponent)) {
      s_.vel_c = -1;
      s_.ball_c = n - 2;
    } else {
      r.reward = 1.0;
      r.done = true;
    }
  }
  if (!r.done && s_.steps >= max_steps_) r.done = true;
  done_ = r.done;
  r.frame = render();
  return r;
}

Tensor MiniPongEnv::render() const {
  Tensor f({size_, size_}, 0.0);
  auto v = f.mutable_values();
  for (int d = -kHalfLength; d <= kHalfLength; ++d) {
    v[static_cast<std::size_t>(s_.agent + d) * size_] = kPaddlePixel;
    v[static_cast<std::size_t>(s_.opponent + d) * size_ + size_ - 1] = kPaddlePixel;
  }
  v[static_cast<std::size_t>(s_.ball_r) * size_ + static_cast<std::size_t>(s_.ball_c)] = kBallPixel;
  return f;
}

std::unique_ptr<Env> make_env(const std::string& name, std::uint64_t seed) {
  if (name == "catch") return std::make_unique<CatchEnv>(seed);
  if (name == "minipong") return std::make_unique<MiniPongEnv>(seed);
  throw ContractError("unknown env '" + name + "' (expected catch or minipong)");
}

// ---- Preprocessing

Tensor resize_nearest(const Tensor& frame, std::size_t out_h, std::size_t out_w) {
  if (frame.rank() != 2) throw DimensionError("resize_nearest: expected [H x W], got rank " + std::to_string(frame.rank()));
  const std::size_t h = frame.dim(0), w = frame.dim(1);
  std::vector<double> out(out_h * out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    const std::size_t si = i * h / out_h;
    for (std::size_t j = 0; j < out_w; ++j) out[i * out_w + j] = frame[si * w + j * w / out_w];
  }
  return Tensor({out_h, out_w}, std::move(out));
}

Preprocessor::Preprocessor(std::size_t out_h, std::size_t out_w, std::size_t depth, bool rescale)
    : out_h_(out_h), out_w_(out_w), depth_(depth), rescale_(rescale) {
  if (out_h == 0 || out_w == 0 || depth == 0) throw ContractError("preprocessor: sizes must be positive");
}

void Preprocessor::reset() { ring_.clear(); }

Tensor Preprocessor::push(const Tensor& frame) {
  Tensor small = resize_nearest(frame, out_h_, out_w_);
  std::vector<double> v(small.values().begin(), small.values().end());
  if (rescale_)
    for (double& x : v) x /= 255.0;
  if (ring_.empty())
    ring_.assign(depth_, v);
  else {
    ring_.pop_front();
    ring_.push_back(std::move(v));
  }
  const std::size_t plane = out_h_ * out_w_;
  std::vector<double> out(depth_ * plane);
  for (std::size_t k = 0; k < depth_; ++k) std::copy(ring_[k].begin(), ring_[k].end(), out.begin() + k * plane);
  return Tensor({depth_, out_h_, out_w_}, std::move(out));
}

}  // namespace attnrl

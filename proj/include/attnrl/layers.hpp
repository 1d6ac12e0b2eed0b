// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Neural building blocks shared by every policy core.

#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "attnrl/tensor.hpp"

namespace attnrl {

using Rng = std::mt19937_64;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

std::size_t parameter_count(const ParamList& params);

// Uniform in +-sqrt(1/fan_in), flagged trainable.
Tensor uniform_param(Shape shape, std::size_t fan_in, Rng& rng);
Tensor zeros_param(Shape shape);
void fill_zero(Tensor& t);

struct Linear {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
  void collect(const std::string& prefix, ParamList& out) const;
  void zero();
};

// x is [in] or [batch x in]; the result keeps the rank of x.
Tensor linear_forward(const Linear& layer, const Tensor& x);

struct LstmCell {
  Tensor W_f, W_i, W_c, W_o;  // [hidden x (hidden + input)]
  Tensor b_f, b_i, b_c, b_o;  // [hidden]

  static LstmCell init(std::size_t input, std::size_t hidden, Rng& rng);
  std::size_t hidden_size() const { return W_f.dim(0); }
  std::size_t input_size() const { return W_f.dim(1) - W_f.dim(0); }
  void collect(const std::string& prefix, ParamList& out) const;
};

// Returns (h, c).
std::pair<Tensor, Tensor> lstm_step(const LstmCell& cell, const Tensor& x, const Tensor& h_prev,
                                    const Tensor& c_prev);

struct ResidualUnit {
  Tensor w1, b1, w2, b2;  // two 3x3 convs of equal width
};

struct ConvBlock {
  Tensor weight, bias;  // 3x3 conv into this block's width
  ResidualUnit res[2];
};

// conv -> max-pool -> two residual units per block, final ReLU.
struct VisionNet {
  std::vector<ConvBlock> blocks;
  std::size_t in_channels = 0;
  std::size_t pool = 2;

  static VisionNet init(std::size_t in_channels, const std::vector<std::size_t>& widths, Rng& rng,
                        std::size_t pool = 2);
  std::size_t out_channels() const;
  // Output [c, h, w] for an input of height x width; throws DimensionError when
  // the pooling schedule does not divide the input.
  Shape output_shape(std::size_t height, std::size_t width) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// frames is [C x H x W] or [B x C x H x W].
Tensor vision_forward(const VisionNet& net, const Tensor& frames);
Tensor residual_forward(const ResidualUnit& unit, const Tensor& x);

struct Mlp {
  std::vector<Linear> layers;
  Activation hidden_activation = Activation::relu;

  static Mlp init(const std::vector<std::size_t>& sizes, Rng& rng,
                  Activation act = Activation::relu);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Activation between layers only; the last layer is linear.
Tensor mlp_forward(const Mlp& mlp, const Tensor& x);

Tensor sinusoidal_encoding(std::size_t max_pos, std::size_t d_model);
Tensor gaussian_encoding(Shape shape, double sigma, Rng& rng);

}  // namespace attnrl

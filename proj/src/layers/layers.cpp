// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "attnrl/layers.hpp"

#include <cmath>

namespace attnrl {

std::size_t parameter_count(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

Tensor uniform_param(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

Tensor zeros_param(Shape shape) {
  Tensor t(std::move(shape), 0.0);
  t.set_requires_grad(true);
  return t;
}

void fill_zero(Tensor& t) {
  for (auto& v : t.mutable_values()) v = 0.0;
}

// ---------------------------------------------------------------------------

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  return Linear{uniform_param({out, in}, in, rng), zeros_param({out})};
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

void Linear::zero() {
  fill_zero(weight);
  fill_zero(bias);
}

Tensor linear_forward(const Linear& layer, const Tensor& x) {
  if (x.rank() == 1) {
    return reshape(linear_forward(layer, reshape(x, {1, x.dim(0)})), {layer.out_features()});
  }
  if (x.rank() != 2 || x.dim(1) != layer.in_features()) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " for weight " +
                         shape_str(layer.weight.shape()));
  }
  return add_row(matmul_nt(x, layer.weight), layer.bias);
}

// ---------------------------------------------------------------------------

LstmCell LstmCell::init(std::size_t input, std::size_t hidden, Rng& rng) {
  const std::size_t fan_in = input + hidden;
  LstmCell cell;
  cell.W_f = uniform_param({hidden, fan_in}, fan_in, rng);
  cell.W_i = uniform_param({hidden, fan_in}, fan_in, rng);
  cell.W_c = uniform_param({hidden, fan_in}, fan_in, rng);
  cell.W_o = uniform_param({hidden, fan_in}, fan_in, rng);
  cell.b_f = zeros_param({hidden});
  cell.b_i = zeros_param({hidden});
  cell.b_c = zeros_param({hidden});
  cell.b_o = zeros_param({hidden});
  return cell;
}

void LstmCell::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".W_f", W_f});
  out.push_back({prefix + ".W_i", W_i});
  out.push_back({prefix + ".W_c", W_c});
  out.push_back({prefix + ".W_o", W_o});
  out.push_back({prefix + ".b_f", b_f});
  out.push_back({prefix + ".b_i", b_i});
  out.push_back({prefix + ".b_c", b_c});
  out.push_back({prefix + ".b_o", b_o});
}

std::pair<Tensor, Tensor> lstm_step(const LstmCell& cell, const Tensor& x, const Tensor& h_prev,
                                    const Tensor& c_prev) {
  const std::size_t hidden = cell.hidden_size();
  if (x.rank() != 1 || x.dim(0) != cell.input_size() || h_prev.shape() != Shape{hidden} ||
      c_prev.shape() != Shape{hidden}) {
    throw DimensionError("lstm_step: x " + shape_str(x.shape()) + ", h " + shape_str(h_prev.shape()) +
                         ", c " + shape_str(c_prev.shape()) + " for cell " +
                         shape_str(cell.W_f.shape()));
  }
  const Tensor z = reshape(concat({h_prev, x}, 0), {1, hidden + x.dim(0)});
  auto gate = [&](const Tensor& w, const Tensor& b) {
    return reshape(add_row(matmul_nt(z, w), b), {hidden});
  };
  const Tensor f = sigmoid(gate(cell.W_f, cell.b_f));
  const Tensor i = sigmoid(gate(cell.W_i, cell.b_i));
  const Tensor c_tilde = tanh(gate(cell.W_c, cell.b_c));
  const Tensor o = sigmoid(gate(cell.W_o, cell.b_o));
  Tensor c = add(mul(f, c_prev), mul(i, c_tilde));
  Tensor h = mul(o, tanh(c));
  return {std::move(h), std::move(c)};
}

// ---------------------------------------------------------------------------

namespace {

Tensor conv_param(std::size_t out, std::size_t in, Rng& rng) {
  return uniform_param({out, in, 3, 3}, in * 9, rng);
}

}  // namespace

VisionNet VisionNet::init(std::size_t in_channels, const std::vector<std::size_t>& widths, Rng& rng,
                          std::size_t pool) {
  VisionNet net;
  net.in_channels = in_channels;
  net.pool = pool;
  std::size_t c_in = in_channels;
  for (std::size_t width : widths) {
    ConvBlock block;
    block.weight = conv_param(width, c_in, rng);
    block.bias = zeros_param({width});
    for (auto& unit : block.res) {
      unit.w1 = conv_param(width, width, rng);
      unit.b1 = zeros_param({width});
      unit.w2 = conv_param(width, width, rng);
      unit.b2 = zeros_param({width});
    }
    net.blocks.push_back(std::move(block));
    c_in = width;
  }
  return net;
}

std::size_t VisionNet::out_channels() const {
  return blocks.empty() ? in_channels : blocks.back().weight.dim(0);
}

Shape VisionNet::output_shape(std::size_t height, std::size_t width) const {
  std::size_t h = height, w = width;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (h % pool != 0 || w % pool != 0) {
      throw DimensionError("vision: input " + std::to_string(height) + "x" + std::to_string(width) +
                           " is not divisible by the pooling schedule (" +
                           std::to_string(blocks.size()) + " x pool " + std::to_string(pool) + ")");
    }
    h /= pool;
    w /= pool;
  }
  return {out_channels(), h, w};
}

void VisionNet::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string p = prefix + ".block" + std::to_string(b);
    out.push_back({p + ".conv.weight", blocks[b].weight});
    out.push_back({p + ".conv.bias", blocks[b].bias});
    for (std::size_t r = 0; r < 2; ++r) {
      const std::string q = p + ".res" + std::to_string(r);
      out.push_back({q + ".w1", blocks[b].res[r].w1});
      out.push_back({q + ".b1", blocks[b].res[r].b1});
      out.push_back({q + ".w2", blocks[b].res[r].w2});
      out.push_back({q + ".b2", blocks[b].res[r].b2});
    }
  }
}

Tensor residual_forward(const ResidualUnit& unit, const Tensor& x) {
  Tensor y = conv2d(relu(x), unit.w1, unit.b1, 1, 1);
  y = conv2d(relu(y), unit.w2, unit.b2, 1, 1);
  return add(x, y);
}

Tensor vision_forward(const VisionNet& net, const Tensor& frames) {
  if (frames.rank() != 3 && frames.rank() != 4) {
    throw DimensionError("vision: frames " + shape_str(frames.shape()) + " must be CxHxW or BxCxHxW");
  }
  const std::size_t r = frames.rank();
  if (frames.dim(r - 3) != net.in_channels) {
    throw DimensionError("vision: frames " + shape_str(frames.shape()) + " for " +
                         std::to_string(net.in_channels) + " input channels");
  }
  net.output_shape(frames.dim(r - 2), frames.dim(r - 1));
  Tensor x = frames;
  for (const auto& block : net.blocks) {
    x = max_pool2d(conv2d(x, block.weight, block.bias, 1, 1), net.pool);
    x = residual_forward(block.res[0], x);
    x = residual_forward(block.res[1], x);
  }
  return relu(x);
}

// ---------------------------------------------------------------------------

Mlp Mlp::init(const std::vector<std::size_t>& sizes, Rng& rng, Activation act) {
  if (sizes.size() < 2) throw ContractError("mlp: need at least input and output sizes");
  Mlp mlp;
  mlp.hidden_activation = act;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
    mlp.layers.push_back(Linear::init(sizes[i], sizes[i + 1], rng));
  return mlp;
}

void Mlp::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].collect(prefix + ".fc" + std::to_string(i), out);
}

Tensor mlp_forward(const Mlp& mlp, const Tensor& x) {
  Tensor y = x;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    y = linear_forward(mlp.layers[i], y);
    if (i + 1 < mlp.layers.size()) y = activation(mlp.hidden_activation, y);
  }
  return y;
}

// ---------------------------------------------------------------------------

Tensor sinusoidal_encoding(std::size_t max_pos, std::size_t d_model) {
  if (d_model % 2 != 0) {
    throw DimensionError("sinusoidal_encoding: d_model " + std::to_string(d_model) + " is odd");
  }
  std::vector<double> v(max_pos * d_model);
  for (std::size_t pos = 0; pos < max_pos; ++pos) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
      v[pos * d_model + 2 * i] = std::sin(angle);
      v[pos * d_model + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor({max_pos, d_model}, std::move(v));
}

Tensor gaussian_encoding(Shape shape, double sigma, Rng& rng) {
  if (!(sigma > 0.0)) throw ContractError("gaussian_encoding: sigma must be positive");
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

}  // namespace attnrl

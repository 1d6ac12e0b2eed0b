// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "attnrl/viz.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace attnrl {
namespace {

std::uint8_t to_byte(double x) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(x + 0.5), 0.0, 255.0));
}

void require_image(const Tensor& t, const char* what) {
  if (!t.defined() || t.rank() != 2 || t.numel() == 0)
    throw DimensionError(std::string(what) + ": expected a non-empty [H x W] tensor");
}

// Sample positions 0, s, 2s, ... plus the last index.
std::vector<std::size_t> sample_positions(std::size_t n, std::size_t stride) {
  std::vector<std::size_t> pos;
  for (std::size_t p = 0; p < n; p += stride) pos.push_back(p);
  if (pos.back() != n - 1) pos.push_back(n - 1);
  return pos;
}

// Index of the sampled interval containing x, and the weight of its right end.
std::pair<std::size_t, double> bracket(const std::vector<std::size_t>& pos, std::size_t x) {
  const auto hit = std::lower_bound(pos.begin(), pos.end(), x);
  if (hit != pos.end() && *hit == x) return {static_cast<std::size_t>(hit - pos.begin()), 0.0};
  auto it = std::upper_bound(pos.begin(), pos.end(), x);
  std::size_t k = static_cast<std::size_t>(it - pos.begin());
  k = std::clamp<std::size_t>(k, 1, pos.size() - 1) - 1;
  const double span = static_cast<double>(pos[k + 1] - pos[k]);
  return {k, static_cast<double>(x - pos[k]) / span};
}

Tensor perturb_with(const Tensor& frame, const Tensor& blurred, std::size_t i, std::size_t j, double sigma_mask) {
  const std::size_t h = frame.dim(frame.rank() - 2), w = frame.dim(frame.rank() - 1);
  const std::size_t planes = frame.numel() / (h * w);
  Tensor out = frame.clone();
  auto o = out.mutable_values();
  auto b = blurred.values();
  const double cut = 5.0 * sigma_mask;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double dr = static_cast<double>(r) - static_cast<double>(i);
      const double dc = static_cast<double>(c) - static_cast<double>(j);
      const double d2 = dr * dr + dc * dc;
      if (d2 > cut * cut) continue;
      const double m = std::exp(-d2 / (2.0 * sigma_mask * sigma_mask));
      for (std::size_t p = 0; p < planes; ++p) {
        const std::size_t k = (p * h + r) * w + c;
        o[k] += m * (b[k] - o[k]);
      }
    }
  return out;
}

double score(const Evaluation& a, const Evaluation& b, SaliencyMode mode) {
  if (mode == SaliencyMode::value) return 0.5 * (a.value - b.value) * (a.value - b.value);
  double s = 0.0;
  for (std::size_t k = 0; k < a.logits.size(); ++k) s += (a.logits[k] - b.logits[k]) * (a.logits[k] - b.logits[k]);
  return 0.5 * s;
}

void write_bytes(const std::filesystem::path& path, const std::string& header, const std::vector<std::uint8_t>& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << header;
  f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<std::uint8_t> read_netpbm(const std::filesystem::path& path, const char* magic, std::size_t channels,
                                      std::size_t& height, std::size_t& width) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string m;
  std::size_t maxval = 0;
  f >> m >> width >> height >> maxval;
  if (!f || m != magic || maxval != 255) throw std::runtime_error("not a " + std::string(magic) + " file: " + path.string());
  f.get();  // the single whitespace byte after maxval
  std::vector<std::uint8_t> data(width * height * channels);
  f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (f.gcount() != static_cast<std::streamsize>(data.size())) throw std::runtime_error("truncated image: " + path.string());
  return data;
}

}  // namespace

Heatmap normalize_attention(const Tensor& a, std::string label) {
  if (!a.defined() || a.numel() == 0) throw DimensionError("normalize_attention: empty input");
  auto v = a.values();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double mn = *lo, range = *hi - *lo;
  std::vector<double> out(v.size(), 0.0);
  if (range > 0.0)
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp((v[i] - mn) / range, 0.0, 1.0);
  return Heatmap{Tensor(a.shape(), std::move(out)), std::move(label)};
}

std::array<std::uint8_t, 3> colormap_value(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const double x = 3.0 * v;
  const int seg = std::min(static_cast<int>(x), 2);
  const double t = x - seg;
  switch (seg) {
    case 0: return {0, to_byte(255.0 * t), to_byte(255.0 * (1.0 - t))};
    case 1: return {to_byte(255.0 * t), 255, 0};
    default: return {255, to_byte(255.0 * (1.0 - t)), 0};
  }
}

RgbImage colormap(const Heatmap& h) {
  require_image(h.values, "colormap");
  RgbImage img{h.values.dim(0), h.values.dim(1), {}};
  img.data.reserve(img.height * img.width * 3);
  for (double v : h.values.values()) {
    const auto rgb = colormap_value(v);
    img.data.insert(img.data.end(), rgb.begin(), rgb.end());
  }
  return img;
}

RgbImage overlay(const Tensor& frame, const RgbImage& heat, double alpha) {
  require_image(frame, "overlay");
  if (alpha < 0.0 || alpha > 1.0) throw DomainError("overlay: alpha must lie in [0,1]");
  if (frame.dim(0) != heat.height || frame.dim(1) != heat.width)
    throw DimensionError("overlay: frame and heatmap sizes differ");
  RgbImage out{heat.height, heat.width, std::vector<std::uint8_t>(heat.data.size())};
  for (std::size_t p = 0; p < frame.numel(); ++p) {
    const double g = std::clamp(frame[p], 0.0, 255.0);
    for (std::size_t ch = 0; ch < 3; ++ch)
      out.data[3 * p + ch] = to_byte(alpha * heat.data[3 * p + ch] + (1.0 - alpha) * g);
  }
  return out;
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  require_image(image, "resize_bilinear");
  const std::size_t h = image.dim(0), w = image.dim(1);
  auto src = image.values();
  auto coord = [](std::size_t o, std::size_t out_n, std::size_t in_n) {
    if (out_n == 1 || in_n == 1) return std::pair<std::size_t, double>{0, 0.0};
    const double x = static_cast<double>(o) * static_cast<double>(in_n - 1) / static_cast<double>(out_n - 1);
    const std::size_t k = std::min(static_cast<std::size_t>(x), in_n - 2);
    return std::pair<std::size_t, double>{k, x - static_cast<double>(k)};
  };
  std::vector<double> out(height * width);
  for (std::size_t r = 0; r < height; ++r) {
    const auto [r0, fr] = coord(r, height, h);
    const std::size_t r1 = std::min(r0 + 1, h - 1);
    for (std::size_t c = 0; c < width; ++c) {
      const auto [c0, fc] = coord(c, width, w);
      const std::size_t c1 = std::min(c0 + 1, w - 1);
      const double top = src[r0 * w + c0] + fc * (src[r0 * w + c1] - src[r0 * w + c0]);
      const double bot = src[r1 * w + c0] + fc * (src[r1 * w + c1] - src[r1 * w + c0]);
      out[r * width + c] = top + fr * (bot - top);
    }
  }
  return Tensor({height, width}, std::move(out));
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  if (!image.defined() || image.rank() < 2) throw DimensionError("gaussian_blur: expected [.. x H x W]");
  Tensor out = image.clone();
  if (sigma <= 0.0) return out;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double z = 0.0;
  for (std::ptrdiff_t d = -radius; d <= radius; ++d)
    z += k[static_cast<std::size_t>(d + radius)] = std::exp(-static_cast<double>(d * d) / (2.0 * sigma * sigma));
  for (double& x : k) x /= z;

  const auto h = static_cast<std::ptrdiff_t>(image.dim(image.rank() - 2));
  const auto w = static_cast<std::ptrdiff_t>(image.dim(image.rank() - 1));
  const std::size_t planes = image.numel() / static_cast<std::size_t>(h * w);
  std::vector<double> tmp(static_cast<std::size_t>(h * w));
  auto o = out.mutable_values();
  // Accumulate weighted differences from the centre so a constant image is
  // reproduced exactly.
  for (std::size_t p = 0; p < planes; ++p) {
    double* img = o.data() + p * static_cast<std::size_t>(h * w);
    for (std::ptrdiff_t r = 0; r < h; ++r)
      for (std::ptrdiff_t c = 0; c < w; ++c) {
        const double centre = img[r * w + c];
        double acc = 0.0;
        for (std::ptrdiff_t d = -radius; d <= radius; ++d)
          acc += k[static_cast<std::size_t>(d + radius)] * (img[r * w + std::clamp<std::ptrdiff_t>(c + d, 0, w - 1)] - centre);
        tmp[static_cast<std::size_t>(r * w + c)] = centre + acc;
      }
    for (std::ptrdiff_t r = 0; r < h; ++r)
      for (std::ptrdiff_t c = 0; c < w; ++c) {
        const double centre = tmp[static_cast<std::size_t>(r * w + c)];
        double acc = 0.0;
        for (std::ptrdiff_t d = -radius; d <= radius; ++d)
          acc += k[static_cast<std::size_t>(d + radius)] *
                 (tmp[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(r + d, 0, h - 1) * w + c)] - centre);
        img[r * w + c] = centre + acc;
      }
  }
  return out;
}

Tensor perturb(const Tensor& frame, std::size_t i, std::size_t j, double sigma_blur, double sigma_mask) {
  if (!frame.defined() || (frame.rank() != 2 && frame.rank() != 3))
    throw DimensionError("perturb: expected [H x W] or [C x H x W]");
  if (i >= frame.dim(frame.rank() - 2) || j >= frame.dim(frame.rank() - 1))
    throw DomainError("perturb: centre out of bounds");
  return perturb_with(frame, gaussian_blur(frame, sigma_blur), i, j, sigma_mask);
}

Tensor saliency_scores(const Evaluator& eval, const Tensor& frame, const SaliencyOptions& opt) {
  if (!frame.defined() || (frame.rank() != 2 && frame.rank() != 3))
    throw DimensionError("saliency: expected [H x W] or [C x H x W]");
  if (opt.stride == 0) throw DomainError("saliency: stride must be positive");
  const std::size_t h = frame.dim(frame.rank() - 2), w = frame.dim(frame.rank() - 1);
  const Tensor blurred = gaussian_blur(frame, opt.sigma_blur);
  const Evaluation base = eval(frame);
  const auto rows = sample_positions(h, opt.stride), cols = sample_positions(w, opt.stride);
  std::vector<double> grid(rows.size() * cols.size());
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = 0; b < cols.size(); ++b)
      grid[a * cols.size() + b] = score(base, eval(perturb_with(frame, blurred, rows[a], cols[b], opt.sigma_mask)), opt.mode);

  std::vector<double> out(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    const auto [a, fr] = bracket(rows, r);
    const std::size_t a1 = std::min(a + 1, rows.size() - 1);
    for (std::size_t c = 0; c < w; ++c) {
      const auto [b, fc] = bracket(cols, c);
      const std::size_t b1 = std::min(b + 1, cols.size() - 1);
      const double* g0 = grid.data() + a * cols.size();
      const double* g1 = grid.data() + a1 * cols.size();
      const double top = fc == 0.0 ? g0[b] : g0[b] + fc * (g0[b1] - g0[b]);
      const double bot = fc == 0.0 ? g1[b] : g1[b] + fc * (g1[b1] - g1[b]);
      out[r * w + c] = fr == 0.0 ? top : top + fr * (bot - top);
    }
  }
  return Tensor({h, w}, std::move(out));
}

Heatmap saliency_map(const Evaluator& eval, const Tensor& frame, const SaliencyOptions& opt) {
  return normalize_attention(saliency_scores(eval, frame, opt),
                             opt.mode == SaliencyMode::policy ? "saliency/policy" : "saliency/value");
}

Evaluator core_evaluator(const PolicyCore& core, const AgentState& state, double prev_reward,
                         const Tensor& prev_logits, bool reset) {
  return [&core, state, prev_reward, prev_logits, reset](const Tensor& frame) {
    NoGradGuard guard;
    const auto& spec = core.spec();
    CoreInput in;
    in.frames = reshape(frame, {1, spec.in_channels, spec.height, spec.width});
    in.prev_reward = {prev_reward};
    in.prev_logits = reshape(prev_logits, {1, spec.num_actions});
    in.resets = {static_cast<std::uint8_t>(reset ? 1 : 0)};
    AgentState st = state;
    const CoreOutput out = core.act(in, st);
    Evaluation e;
    e.logits.assign(out.policy_logits.values().begin(), out.policy_logits.values().end());
    e.value = out.baseline[0];
    return e;
  };
}

Tensor tile_average(const AttentionMap& map, std::size_t grid_h, std::size_t grid_w) {
  const std::size_t n = grid_h * grid_w;
  if (n == 0 || map.cols < n || map.rows == 0) throw DimensionError("tile_average: map smaller than the patch grid");
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < map.rows; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += map.probs[r * map.cols + (map.cols - n) + c];
  for (double& x : out) x /= static_cast<double>(map.rows);
  return Tensor({grid_h, grid_w}, std::move(out));
}

void write_image(const RgbImage& img, const std::filesystem::path& path) {
  if (img.data.size() != img.height * img.width * 3) throw DimensionError("write_image: data size mismatch");
  std::ostringstream h;
  h << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  write_bytes(path, h.str(), img.data);
}

void write_image(const GrayImage& img, const std::filesystem::path& path) {
  if (img.data.size() != img.height * img.width) throw DimensionError("write_image: data size mismatch");
  std::ostringstream h;
  h << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  write_bytes(path, h.str(), img.data);
}

RgbImage read_ppm(const std::filesystem::path& path) {
  RgbImage img;
  img.data = read_netpbm(path, "P6", 3, img.height, img.width);
  return img;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  GrayImage img;
  img.data = read_netpbm(path, "P5", 1, img.height, img.width);
  return img;
}

GrayImage to_gray(const Heatmap& h) {
  require_image(h.values, "to_gray");
  GrayImage g{h.values.dim(0), h.values.dim(1), {}};
  for (double v : h.values.values()) g.data.push_back(to_byte(255.0 * std::clamp(v, 0.0, 1.0)));
  return g;
}

}  // namespace attnrl

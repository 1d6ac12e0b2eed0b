// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Heatmaps, overlays, perturbation saliency and PPM/PGM output.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "attnrl/core.hpp"

namespace attnrl {

struct Heatmap {
  Tensor values;  // [H x W] in [0,1]
  std::string label;
};

struct RgbImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> data;  // row-major, R G B per pixel
  std::uint8_t* at(std::size_t r, std::size_t c) { return data.data() + 3 * (r * width + c); }
  const std::uint8_t* at(std::size_t r, std::size_t c) const { return data.data() + 3 * (r * width + c); }
};

struct GrayImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> data;
};

inline constexpr double kDefaultBlurSigma = 3.0;
inline constexpr double kDefaultMaskSigma = 5.0;
inline constexpr std::size_t kDefaultSaliencyStride = 5;
inline constexpr double kDefaultAlpha = 0.5;

// (a - min) / (max - min); a constant input gives zeros.
Heatmap normalize_attention(const Tensor& a, std::string label = {});

// Blue, green, yellow, red at 0, 1/3, 2/3, 1, linear in between.
std::array<std::uint8_t, 3> colormap_value(double v);
RgbImage colormap(const Heatmap& h);

// frame is [H x W] on the byte scale [0, 255]. Rounds half up.
RgbImage overlay(const Tensor& frame, const RgbImage& heat, double alpha = kDefaultAlpha);

// Bilinear resize with aligned corners: output corners sample input corners.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

// Separable Gaussian blur, kernel truncated at 3 sigma, edges replicated.
Tensor gaussian_blur(const Tensor& image, double sigma);

// I + M (blur(I) - I) with M a unit-peak Gaussian at (i, j). The mask is cut
// to zero beyond 5 sigma_mask. Rank 3 input [C x H x W] is perturbed per channel.
Tensor perturb(const Tensor& frame, std::size_t i, std::size_t j, double sigma_blur = kDefaultBlurSigma,
               double sigma_mask = kDefaultMaskSigma);

struct Evaluation {
  std::vector<double> logits;
  double value = 0.0;
};
using Evaluator = std::function<Evaluation(const Tensor& frame)>;

enum class SaliencyMode { policy, value };

struct SaliencyOptions {
  SaliencyMode mode = SaliencyMode::policy;
  std::size_t stride = kDefaultSaliencyStride;
  double sigma_blur = kDefaultBlurSigma;
  double sigma_mask = kDefaultMaskSigma;
};

// Raw scores 0.5 |f(I) - f(perturb(I, i, j))|^2 on the stride grid (the last
// row and column are always sampled), bilinearly filled. Not normalized.
Tensor saliency_scores(const Evaluator& eval, const Tensor& frame, const SaliencyOptions& opt = {});
Heatmap saliency_map(const Evaluator& eval, const Tensor& frame, const SaliencyOptions& opt = {});

// Evaluates one step of core from a copy of state. frame is [C x H x W].
Evaluator core_evaluator(const PolicyCore& core, const AgentState& state, double prev_reward,
                         const Tensor& prev_logits, bool reset = false);

// Spatial attention of one map as a [grid_h x grid_w] tensor, averaged over
// the query tiles. Only the last grid_h * grid_w key columns are used, which
// is the current frame for joint maps.
Tensor tile_average(const AttentionMap& map, std::size_t grid_h, std::size_t grid_w);

void write_image(const RgbImage& img, const std::filesystem::path& path);
void write_image(const GrayImage& img, const std::filesystem::path& path);
RgbImage read_ppm(const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);

// [0,1] heatmap to bytes, rounding half up.
GrayImage to_gray(const Heatmap& h);

}  // namespace attnrl

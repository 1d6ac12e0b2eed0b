// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Direct cross-correlation through im2col + GEMM. Columns are rebuilt during
// backward instead of being kept alive on the tape.

#include <algorithm>
#include <limits>

#include "emit.hpp"

namespace attnrl {

using detail::cmap;
using detail::emit;
using detail::mmap;

namespace {

struct ConvGeometry {
  std::size_t batch, c_in, h, w, c_out, kh, kw, stride, pad, out_h, out_w;
  bool batched;

  std::size_t patch() const { return c_in * kh * kw; }
  std::size_t out_cells() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
  const bool batched = x.rank() == 4;
  if ((x.rank() != 3 && x.rank() != 4) || k.rank() != 4) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " / kernels " +
                         shape_str(k.shape()) + " have the wrong rank");
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  ConvGeometry g{};
  g.batched = batched;
  const std::size_t off = batched ? 1 : 0;
  g.batch = batched ? x.dim(0) : 1;
  g.c_in = x.dim(off);
  g.h = x.dim(off + 1);
  g.w = x.dim(off + 2);
  g.c_out = k.dim(0);
  g.kh = k.dim(2);
  g.kw = k.dim(3);
  g.stride = stride;
  g.pad = pad;
  if (k.dim(1) != g.c_in) {
    throw DimensionError("conv2d: kernels " + shape_str(k.shape()) + " expect " +
                         std::to_string(k.dim(1)) + " input channels, input " +
                         shape_str(x.shape()) + " has " + std::to_string(g.c_in));
  }
  const std::size_t span_h = g.h + 2 * pad;
  const std::size_t span_w = g.w + 2 * pad;
  if (span_h < g.kh || span_w < g.kw || (span_h - g.kh) % stride != 0 ||
      (span_w - g.kw) % stride != 0) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " with kernel " +
                         std::to_string(g.kh) + "x" + std::to_string(g.kw) + ", stride " +
                         std::to_string(stride) + ", padding " + std::to_string(pad) +
                         " gives a non-integral output size");
  }
  g.out_h = (span_h - g.kh) / stride + 1;
  g.out_w = (span_w - g.kw) / stride + 1;
  return g;
}

// cols[(c*kh + i)*kw + j][oy*out_w + ox] = x[c][oy*s + i - pad][ox*s + j - pad]
// Rows are ld apart so several images can share one column matrix; cols
// must be zeroed by the caller.
void im2col(const ConvGeometry& g, const double* image, double* cols, std::size_t ld) {
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * ld;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
          const double* src = image + (c * g.h + static_cast<std::size_t>(y)) * g.w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.w)) continue;
            row[oy * g.out_w + ox] = src[xx];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* cols, std::size_t ld, double* image_grad) {
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * ld;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = image_grad + (c * g.h + static_cast<std::size_t>(y)) * g.w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dst[xx] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

// Images per GEMM: wide enough to amortise the small kernel matrix, small
// enough to bound the column buffer.
constexpr std::size_t kGroup = 8;

using ColMap = Eigen::Map<const detail::RowMat, 0, Eigen::OuterStride<>>;

Tensor conv_impl(const Tensor& x, const Tensor& kernels, const Tensor* bias, std::size_t stride,
                 std::size_t padding) {
  const ConvGeometry g = conv_geometry(x, kernels, stride, padding);
  if (bias && bias->shape() != Shape{g.c_out}) {
    throw DimensionError("conv2d: bias " + shape_str(bias->shape()) + " for " +
                         std::to_string(g.c_out) + " output channels");
  }
  const std::size_t in_size = g.c_in * g.h * g.w;
  const std::size_t out_size = g.c_out * g.out_cells();
  const std::size_t cells = g.out_cells();
  Storage out(g.batch * out_size);
  Storage cols, prod;
  auto xv = x.values();
  auto kmat = cmap(kernels.values(), g.c_out, g.patch());
  for (std::size_t b0 = 0; b0 < g.batch; b0 += kGroup) {
    const std::size_t n = std::min(kGroup, g.batch - b0);
    const std::size_t ld = n * cells;
    cols.assign(g.patch() * ld, 0.0);
    for (std::size_t b = 0; b < n; ++b) im2col(g, xv.data() + (b0 + b) * in_size, cols.data() + b * cells, ld);
    prod.resize(g.c_out * ld);
    mmap(prod, g.c_out, ld).noalias() = kmat * cmap(cols, g.patch(), ld);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < g.c_out; ++c) {
        const double* src = prod.data() + c * ld + b * cells;
        double* dst = out.data() + (b0 + b) * out_size + c * cells;
        const double add = bias ? bias->values()[c] : 0.0;
        for (std::size_t k = 0; k < cells; ++k) dst[k] = src[k] + add;
      }
  }
  Shape out_shape = g.batched ? Shape{g.batch, g.c_out, g.out_h, g.out_w}
                              : Shape{g.c_out, g.out_h, g.out_w};
  auto rule = [g, in_size, out_size, cells, has_bias = bias != nullptr](GraphNode& node) {
    auto& xin = *node.inputs[0];
    auto& kin = *node.inputs[1];
    std::span<const double> grad = node.output->grad;
    Storage cols, gall, dcols;
    auto kmat = cmap(kin.data, g.c_out, g.patch());
    for (std::size_t b0 = 0; b0 < g.batch; b0 += kGroup) {
      const std::size_t n = std::min(kGroup, g.batch - b0);
      const std::size_t ld = n * cells;
      // Gradient regrouped as [c_out x n*cells].
      gall.resize(g.c_out * ld);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < g.c_out; ++c)
          std::copy_n(grad.data() + (b0 + b) * out_size + c * cells, cells, gall.data() + c * ld + b * cells);
      auto gmat = cmap(gall, g.c_out, ld);
      if (kin.requires_grad) {
        cols.assign(g.patch() * ld, 0.0);
        for (std::size_t b = 0; b < n; ++b)
          im2col(g, xin.data.data() + (b0 + b) * in_size, cols.data() + b * cells, ld);
        mmap(grad_buffer(kin), g.c_out, g.patch()).noalias() += gmat * cmap(cols, g.patch(), ld).transpose();
      }
      if (xin.requires_grad) {
        dcols.resize(g.patch() * ld);
        mmap(dcols, g.patch(), ld).noalias() = kmat.transpose() * gmat;
        auto& dx = grad_buffer(xin);
        for (std::size_t b = 0; b < n; ++b)
          col2im_add(g, dcols.data() + b * cells, ld, dx.data() + (b0 + b) * in_size);
      }
      if (has_bias && node.inputs[2]->requires_grad) {
        auto& db = grad_buffer(*node.inputs[2]);
        for (std::size_t c = 0; c < g.c_out; ++c) db[c] += gmat.row(static_cast<Eigen::Index>(c)).sum();
      }
    }
  };
  if (bias) return emit(std::move(out_shape), std::move(out), {&x, &kernels, bias}, rule);
  return emit(std::move(out_shape), std::move(out), {&x, &kernels}, rule);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernels, std::size_t stride, std::size_t padding) {
  return conv_impl(x, kernels, nullptr, stride, padding);
}

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  return conv_impl(x, kernels, &bias, stride, padding);
}

Tensor max_pool2d(const Tensor& x, std::size_t size) {
  if ((x.rank() != 3 && x.rank() != 4) || size == 0) {
    throw DimensionError("max_pool2d: input " + shape_str(x.shape()) + " must be CxHxW or BxCxHxW");
  }
  const std::size_t h = x.dim(x.rank() - 2);
  const std::size_t w = x.dim(x.rank() - 1);
  if (h % size != 0 || w % size != 0) {
    throw DimensionError("max_pool2d: input " + shape_str(x.shape()) + " is not divisible by window " +
                         std::to_string(size));
  }
  const std::size_t planes = x.numel() / (h * w);
  const std::size_t oh = h / size, ow = w / size;
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  auto xv = x.values();
  Storage out(planes * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t at = 0;
        for (std::size_t i = 0; i < size; ++i) {
          for (std::size_t j = 0; j < size; ++j) {
            const std::size_t idx = (p * h + oy * size + i) * w + ox * size + j;
            if (xv[idx] > best) {
              best = xv[idx];
              at = idx;
            }
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = best;
        argmax[o] = at;
      }
    }
  }
  return emit(std::move(out_shape), std::move(out), {&x}, [argmax = std::move(argmax)](GraphNode& n) {
    auto& dx = grad_buffer(*n.inputs[0]);
    const auto& g = n.output->grad;
    for (std::size_t o = 0; o < g.size(); ++o) dx[argmax[o]] += g[o];
  });
}

}  // namespace attnrl

// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "emit.hpp"

namespace attnrl {

using detail::cmap;
using detail::emit;
using detail::mmap;
using detail::split_axis;
using detail::wants_grad;

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

void accumulate(TensorImpl& target, std::span<const double> g, double factor = 1.0) {
  auto& dst = grad_buffer(target);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
}

std::size_t last_extent(const Tensor& a, const char* op) {
  if (a.rank() == 0) throw DimensionError(std::string(op) + ": scalar input has no last axis");
  return a.shape().back();
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto av = a.values();
  auto bv = b.values();
  Storage out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return emit(a.shape(), std::move(out), {&a, &b}, [](GraphNode& n) {
    const auto& g = n.output->grad;
    for (auto& in : n.inputs)
      if (wants_grad(in)) accumulate(*in, g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto av = a.values();
  auto bv = b.values();
  Storage out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return emit(a.shape(), std::move(out), {&a, &b}, [](GraphNode& n) {
    const auto& g = n.output->grad;
    if (wants_grad(n.inputs[0])) accumulate(*n.inputs[0], g);
    if (wants_grad(n.inputs[1])) accumulate(*n.inputs[1], g, -1.0);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto av = a.values();
  auto bv = b.values();
  Storage out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return emit(a.shape(), std::move(out), {&a, &b}, [](GraphNode& n) {
    const auto& g = n.output->grad;
    auto& x = *n.inputs[0];
    auto& y = *n.inputs[1];
    if (x.requires_grad) {
      auto& dx = grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y.data[i];
    }
    if (y.requires_grad) {
      auto& dy = grad_buffer(y);
      for (std::size_t i = 0; i < g.size(); ++i) dy[i] += g[i] * x.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  auto av = a.values();
  Storage out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return emit(a.shape(), std::move(out), {&a}, [factor](GraphNode& n) {
    accumulate(*n.inputs[0], n.output->grad, factor);
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  auto av = a.values();
  Storage out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + value;
  return emit(a.shape(), std::move(out), {&a},
              [](GraphNode& n) { accumulate(*n.inputs[0], n.output->grad); });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  const std::size_t n = last_extent(a, "add_row");
  if (row.shape() != Shape{n}) {
    throw DimensionError("add_row: row " + shape_str(row.shape()) + " does not match " +
                         shape_str(a.shape()));
  }
  auto av = a.values();
  auto rv = row.values();
  Storage out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + rv[i % n];
  return emit(a.shape(), std::move(out), {&a, &row}, [n](GraphNode& node) {
    const auto& g = node.output->grad;
    if (wants_grad(node.inputs[0])) accumulate(*node.inputs[0], g);
    if (wants_grad(node.inputs[1])) {
      auto& dr = grad_buffer(*node.inputs[1]);
      for (std::size_t i = 0; i < g.size(); ++i) dr[i % n] += g[i];
    }
  });
}

Tensor mul_row(const Tensor& a, const Tensor& row) {
  const std::size_t n = last_extent(a, "mul_row");
  if (row.shape() != Shape{n}) {
    throw DimensionError("mul_row: row " + shape_str(row.shape()) + " does not match " +
                         shape_str(a.shape()));
  }
  auto av = a.values();
  auto rv = row.values();
  Storage out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * rv[i % n];
  return emit(a.shape(), std::move(out), {&a, &row}, [n](GraphNode& node) {
    const auto& g = node.output->grad;
    auto& x = *node.inputs[0];
    auto& r = *node.inputs[1];
    if (x.requires_grad) {
      auto& dx = grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * r.data[i % n];
    }
    if (r.requires_grad) {
      auto& dr = grad_buffer(r);
      for (std::size_t i = 0; i < g.size(); ++i) dr[i % n] += g[i] * x.data[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Structural

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto av = a.values();
  return emit(std::move(shape), Storage(av.begin(), av.end()), {&a},
              [](GraphNode& n) { accumulate(*n.inputs[0], n.output->grad); });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const Shape& in_shape = a.shape();
  const std::size_t rank = in_shape.size();
  if (axes.size() != rank) {
    throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for shape " +
                         shape_str(in_shape));
  }
  std::vector<bool> seen(rank, false);
  for (auto ax : axes) {
    if (ax >= rank || seen[ax]) throw DimensionError("permute: invalid axis order");
    seen[ax] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(rank);
  std::vector<std::size_t> src_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[axes[i]];
    src_strides[i] = in_strides[axes[i]];
  }
  // Source offset for every destination element.
  const std::size_t total = a.numel();
  std::vector<std::size_t> source(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < total; ++k) {
    source[k] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      if (++counter[d] < out_shape[d]) {
        offset += src_strides[d];
        break;
      }
      offset -= src_strides[d] * (out_shape[d] - 1);
      counter[d] = 0;
    }
  }
  auto av = a.values();
  Storage out(total);
  for (std::size_t k = 0; k < total; ++k) out[k] = av[source[k]];
  return emit(std::move(out_shape), std::move(out), {&a},
              [source = std::move(source)](GraphNode& n) {
                auto& dx = grad_buffer(*n.inputs[0]);
                const auto& g = n.output->grad;
                for (std::size_t k = 0; k < g.size(); ++k) dx[source[k]] += g[k];
              });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(first));
  }
  std::vector<std::size_t> extents;
  std::size_t total_extent = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      if (i != axis && s[i] != first[i]) ok = false;
    if (!ok) {
      throw DimensionError("concat: shapes " + shape_str(first) + " and " + shape_str(s) +
                           " disagree off axis " + std::to_string(axis));
    }
    extents.push_back(s[axis]);
    total_extent += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total_extent;
  auto split = split_axis(out_shape, axis, "concat");
  Storage out(shape_numel(out_shape));
  std::size_t col = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto pv = parts[p].values();
    const std::size_t block = extents[p] * split.inner;
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(pv.begin() + o * block, block,
                  out.begin() + (o * total_extent + col) * split.inner);
    }
    col += extents[p];
  }
  return emit(out_shape, std::move(out), parts,
              [extents, split, total_extent](GraphNode& n) {
                const auto& g = n.output->grad;
                std::size_t c = 0;
                for (std::size_t p = 0; p < n.inputs.size(); ++p) {
                  const std::size_t block = extents[p] * split.inner;
                  if (wants_grad(n.inputs[p])) {
                    auto& dx = grad_buffer(*n.inputs[p]);
                    for (std::size_t o = 0; o < split.outer; ++o) {
                      const double* src = g.data() + (o * total_extent + c) * split.inner;
                      double* dst = dx.data() + o * block;
                      for (std::size_t k = 0; k < block; ++k) dst[k] += src[k];
                    }
                  }
                  c += extents[p];
                }
              });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  auto split = split_axis(a.shape(), axis, "slice");
  if (start + length > split.extent) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") exceeds axis " +
                         std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  auto av = a.values();
  Storage out(shape_numel(out_shape));
  const std::size_t block = length * split.inner;
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(av.begin() + (o * split.extent + start) * split.inner, block,
                out.begin() + o * block);
  }
  return emit(std::move(out_shape), std::move(out), {&a}, [split, start, block](GraphNode& n) {
    auto& dx = grad_buffer(*n.inputs[0]);
    const auto& g = n.output->grad;
    for (std::size_t o = 0; o < split.outer; ++o) {
      double* dst = dx.data() + (o * split.extent + start) * split.inner;
      const double* src = g.data() + o * block;
      for (std::size_t k = 0; k < block; ++k) dst[k] += src[k];
    }
  });
}

Tensor gather_columns(const Tensor& a, const std::vector<std::size_t>& idx) {
  if (a.rank() != 2 || a.dim(0) != idx.size()) {
    throw DimensionError("gather_columns: " + shape_str(a.shape()) + " with " +
                         std::to_string(idx.size()) + " indices");
  }
  const std::size_t cols = a.dim(1);
  auto av = a.values();
  Storage out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= cols) throw DimensionError("gather_columns: index out of range");
    out[i] = av[i * cols + idx[i]];
  }
  return emit(Shape{idx.size()}, std::move(out), {&a}, [idx, cols](GraphNode& n) {
    auto& dx = grad_buffer(*n.inputs[0]);
    const auto& g = n.output->grad;
    for (std::size_t i = 0; i < idx.size(); ++i) dx[i * cols + idx[i]] += g[i];
  });
}

Tensor index_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
  if (a.rank() < 1) throw DimensionError("index_rows: scalar input");
  const std::size_t rows = a.dim(0);
  const std::size_t width = rows == 0 ? 0 : a.numel() / rows;
  auto av = a.values();
  Storage out(idx.size() * width);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows) {
      throw DimensionError("index_rows: row " + std::to_string(idx[i]) + " out of range for " +
                           shape_str(a.shape()));
    }
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(idx[i] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  Shape shape = a.shape();
  shape[0] = idx.size();
  return emit(std::move(shape), std::move(out), {&a}, [idx, width](GraphNode& n) {
    auto& dx = grad_buffer(*n.inputs[0]);
    const auto& g = n.output->grad;
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t k = 0; k < width; ++k) dx[idx[i] * width + k] += g[i * width + k];
  });
}

Tensor masked_fill(const Tensor& a, const std::vector<std::uint8_t>& allowed, double value) {
  if (allowed.size() != a.numel()) {
    throw DimensionError("masked_fill: mask of " + std::to_string(allowed.size()) +
                         " entries for " + shape_str(a.shape()));
  }
  auto av = a.values();
  Storage out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = allowed[i] ? av[i] : value;
  return emit(a.shape(), std::move(out), {&a}, [allowed](GraphNode& n) {
    auto& dx = grad_buffer(*n.inputs[0]);
    const auto& g = n.output->grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (allowed[i]) dx[i] += g[i];
  });
}

Tensor sum(const Tensor& a) {
  auto av = a.values();
  const double total = std::accumulate(av.begin(), av.end(), 0.0);
  return emit(Shape{}, {total}, {&a}, [](GraphNode& n) {
    auto& dx = grad_buffer(*n.inputs[0]);
    const double g = n.output->grad[0];
    for (auto& v : dx) v += g;
  });
}

Tensor sum(const Tensor& a, std::size_t axis) {
  auto split = split_axis(a.shape(), axis, "sum");
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  auto av = a.values();
  Storage out(split.outer * split.inner, 0.0);
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t k = 0; k < split.extent; ++k)
      for (std::size_t i = 0; i < split.inner; ++i)
        out[o * split.inner + i] += av[(o * split.extent + k) * split.inner + i];
  return emit(std::move(out_shape), std::move(out), {&a}, [split](GraphNode& n) {
    auto& dx = grad_buffer(*n.inputs[0]);
    const auto& g = n.output->grad;
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t k = 0; k < split.extent; ++k)
        for (std::size_t i = 0; i < split.inner; ++i)
          dx[(o * split.extent + k) * split.inner + i] += g[o * split.inner + i];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " are incompatible");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Storage out(m * n);
  mmap(out, m, n).noalias() = cmap(a.values(), m, k) * cmap(b.values(), k, n);
  return emit(Shape{m, n}, std::move(out), {&a, &b}, [m, k, n](GraphNode& node) {
    auto& x = *node.inputs[0];
    auto& y = *node.inputs[1];
    auto g = cmap(node.output->grad, m, n);
    if (x.requires_grad) mmap(grad_buffer(x), m, k).noalias() += g * cmap(y.data, k, n).transpose();
    if (y.requires_grad) mmap(grad_buffer(y), k, n).noalias() += cmap(x.data, m, k).transpose() * g;
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + "^T are incompatible");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Storage out(m * n);
  mmap(out, m, n).noalias() = cmap(a.values(), m, k) * cmap(b.values(), n, k).transpose();
  return emit(Shape{m, n}, std::move(out), {&a, &b}, [m, k, n](GraphNode& node) {
    auto& x = *node.inputs[0];
    auto& y = *node.inputs[1];
    auto g = cmap(node.output->grad, m, n);
    if (x.requires_grad) mmap(grad_buffer(x), m, k).noalias() += g * cmap(y.data, n, k);
    if (y.requires_grad) mmap(grad_buffer(y), n, k).noalias() += g.transpose() * cmap(x.data, m, k);
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " are incompatible");
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Storage out(batch * m * n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < batch; ++i) {
    mmap(std::span(out).subspan(i * m * n, m * n), m, n).noalias() =
        cmap(av.subspan(i * m * k, m * k), m, k) * cmap(bv.subspan(i * k * n, k * n), k, n);
  }
  return emit(Shape{batch, m, n}, std::move(out), {&a, &b}, [batch, m, k, n](GraphNode& node) {
    auto& x = *node.inputs[0];
    auto& y = *node.inputs[1];
    std::span<const double> g = node.output->grad;
    for (std::size_t i = 0; i < batch; ++i) {
      auto gi = cmap(g.subspan(i * m * n, m * n), m, n);
      if (x.requires_grad) {
        mmap(std::span(grad_buffer(x)).subspan(i * m * k, m * k), m, k).noalias() +=
            gi * cmap(std::span<const double>(y.data).subspan(i * k * n, k * n), k, n).transpose();
      }
      if (y.requires_grad) {
        mmap(std::span(grad_buffer(y)).subspan(i * k * n, k * n), k, n).noalias() +=
            cmap(std::span<const double>(x.data).subspan(i * m * k, m * k), m, k).transpose() * gi;
      }
    }
  });
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
    throw DimensionError("bmm_nt: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + "^T are incompatible");
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  Storage out(batch * m * n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < batch; ++i) {
    mmap(std::span(out).subspan(i * m * n, m * n), m, n).noalias() =
        cmap(av.subspan(i * m * k, m * k), m, k) *
        cmap(bv.subspan(i * n * k, n * k), n, k).transpose();
  }
  return emit(Shape{batch, m, n}, std::move(out), {&a, &b}, [batch, m, k, n](GraphNode& node) {
    auto& x = *node.inputs[0];
    auto& y = *node.inputs[1];
    std::span<const double> g = node.output->grad;
    for (std::size_t i = 0; i < batch; ++i) {
      auto gi = cmap(g.subspan(i * m * n, m * n), m, n);
      if (x.requires_grad) {
        mmap(std::span(grad_buffer(x)).subspan(i * m * k, m * k), m, k).noalias() +=
            gi * cmap(std::span<const double>(y.data).subspan(i * n * k, n * k), n, k);
      }
      if (y.requires_grad) {
        mmap(std::span(grad_buffer(y)).subspan(i * n * k, n * k), n, k).noalias() +=
            gi.transpose() * cmap(std::span<const double>(x.data).subspan(i * m * k, m * k), m, k);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax family

Tensor softmax(const Tensor& x, std::size_t axis) {
  auto split = split_axis(x.shape(), axis, "softmax");
  auto xv = x.values();
  Storage out(xv.size());
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t i = 0; i < split.inner; ++i) {
      const std::size_t base = o * split.extent * split.inner + i;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < split.extent; ++k) peak = std::max(peak, xv[base + k * split.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < split.extent; ++k) {
        const double e = std::exp(xv[base + k * split.inner] - peak);
        out[base + k * split.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < split.extent; ++k) out[base + k * split.inner] /= total;
    }
  }
  return emit(x.shape(), std::move(out), {&x}, [split](GraphNode& n) {
    auto& dx = grad_buffer(*n.inputs[0]);
    const auto& g = n.output->grad;
    const auto& y = n.output->data;
    for (std::size_t o = 0; o < split.outer; ++o) {
      for (std::size_t i = 0; i < split.inner; ++i) {
        const std::size_t base = o * split.extent * split.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < split.extent; ++k) {
          const std::size_t at = base + k * split.inner;
          dot += g[at] * y[at];
        }
        for (std::size_t k = 0; k < split.extent; ++k) {
          const std::size_t at = base + k * split.inner;
          dx[at] += y[at] * (g[at] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  auto split = split_axis(x.shape(), axis, "log_softmax");
  auto xv = x.values();
  Storage out(xv.size());
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t i = 0; i < split.inner; ++i) {
      const std::size_t base = o * split.extent * split.inner + i;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < split.extent; ++k) peak = std::max(peak, xv[base + k * split.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < split.extent; ++k) total += std::exp(xv[base + k * split.inner] - peak);
      const double log_z = peak + std::log(total);
      for (std::size_t k = 0; k < split.extent; ++k)
        out[base + k * split.inner] = xv[base + k * split.inner] - log_z;
    }
  }
  return emit(x.shape(), std::move(out), {&x}, [split](GraphNode& n) {
    auto& dx = grad_buffer(*n.inputs[0]);
    const auto& g = n.output->grad;
    const auto& y = n.output->data;
    for (std::size_t o = 0; o < split.outer; ++o) {
      for (std::size_t i = 0; i < split.inner; ++i) {
        const std::size_t base = o * split.extent * split.inner + i;
        double gsum = 0.0;
        for (std::size_t k = 0; k < split.extent; ++k) gsum += g[base + k * split.inner];
        for (std::size_t k = 0; k < split.extent; ++k) {
          const std::size_t at = base + k * split.inner;
          dx[at] += g[at] - std::exp(y[at]) * gsum;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, std::size_t axis,
                  double eps) {
  auto split = split_axis(x.shape(), axis, "layer_norm");
  if (split.extent == 0) throw DimensionError("layer_norm: zero-length axis in " + shape_str(x.shape()));
  if (gain.shape() != Shape{split.extent} || bias.shape() != Shape{split.extent}) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match axis extent " +
                         std::to_string(split.extent));
  }
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  const std::size_t slices = split.outer * split.inner;
  Storage xhat(xv.size());
  Storage inv_std(slices);
  Storage out(xv.size());
  const double n = static_cast<double>(split.extent);
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t i = 0; i < split.inner; ++i) {
      const std::size_t base = o * split.extent * split.inner + i;
      double mu = 0.0;
      for (std::size_t k = 0; k < split.extent; ++k) mu += xv[base + k * split.inner];
      mu /= n;
      double var = 0.0;
      for (std::size_t k = 0; k < split.extent; ++k) {
        const double d = xv[base + k * split.inner] - mu;
        var += d * d;
      }
      var /= n;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[o * split.inner + i] = is;
      for (std::size_t k = 0; k < split.extent; ++k) {
        const std::size_t at = base + k * split.inner;
        xhat[at] = (xv[at] - mu) * is;
        out[at] = gv[k] * xhat[at] + bv[k];
      }
    }
  }
  return emit(x.shape(), std::move(out), {&x, &gain, &bias},
              [split, xhat = std::move(xhat), inv_std = std::move(inv_std)](GraphNode& node) {
                const auto& g = node.output->grad;
                auto& xin = *node.inputs[0];
                auto& gin = *node.inputs[1];
                auto& bin = *node.inputs[2];
                const double n = static_cast<double>(split.extent);
                Storage dxhat(split.extent);
                for (std::size_t o = 0; o < split.outer; ++o) {
                  for (std::size_t i = 0; i < split.inner; ++i) {
                    const std::size_t base = o * split.extent * split.inner + i;
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::size_t k = 0; k < split.extent; ++k) {
                      const std::size_t at = base + k * split.inner;
                      dxhat[k] = g[at] * gin.data[k];
                      mean_d += dxhat[k];
                      mean_dx += dxhat[k] * xhat[at];
                      if (gin.requires_grad) grad_buffer(gin)[k] += g[at] * xhat[at];
                      if (bin.requires_grad) grad_buffer(bin)[k] += g[at];
                    }
                    if (!xin.requires_grad) continue;
                    mean_d /= n;
                    mean_dx /= n;
                    const double is = inv_std[o * split.inner + i];
                    auto& dx = grad_buffer(xin);
                    for (std::size_t k = 0; k < split.extent; ++k) {
                      const std::size_t at = base + k * split.inner;
                      dx[at] += is * (dxhat[k] - mean_d - xhat[at] * mean_dx);
                    }
                  }
                }
              });
}

// ---------------------------------------------------------------------------
// Activations

Tensor activation(Activation kind, const Tensor& x) {
  auto xv = x.values();
  Storage out(xv.size());
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
      break;
    case Activation::gelu:
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = xv[i] * 0.5 * (1.0 + std::erf(xv[i] * kInvSqrt2));
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
      break;
    case Activation::exp:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xv[i]);
      break;
    case Activation::log:
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(xv[i] > 0.0)) throw DomainError("log of non-positive value " + std::to_string(xv[i]));
        out[i] = std::log(xv[i]);
      }
      break;
  }
  return emit(x.shape(), std::move(out), {&x}, [kind](GraphNode& n) {
    auto& dx = grad_buffer(*n.inputs[0]);
    const auto& g = n.output->grad;
    const auto& xin = n.inputs[0]->data;
    const auto& y = n.output->data;
    switch (kind) {
      case Activation::relu:
        for (std::size_t i = 0; i < g.size(); ++i)
          if (xin[i] > 0.0) dx[i] += g[i];
        break;
      case Activation::gelu:
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double cdf = 0.5 * (1.0 + std::erf(xin[i] * kInvSqrt2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xin[i] * xin[i]);
          dx[i] += g[i] * (cdf + xin[i] * pdf);
        }
        break;
      case Activation::sigmoid:
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      case Activation::tanh:
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      case Activation::exp:
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i];
        break;
      case Activation::log:
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] / xin[i];
        break;
    }
  });
}

}  // namespace attnrl

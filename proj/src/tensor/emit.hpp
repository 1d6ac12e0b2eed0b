// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Internal helpers shared by the op implementations.

#pragma once

#include <Eigen/Core>

#include <initializer_list>
#include <span>

#include "attnrl/tensor.hpp"

namespace attnrl::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline ConstMap cmap(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return ConstMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline MutMap mmap(std::span<double> data, std::size_t rows, std::size_t cols) {
  return MutMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline bool wants_grad(const std::shared_ptr<TensorImpl>& impl) { return impl->requires_grad; }

// Builds the result tensor and, when any input requires a gradient and the
// tape is recording, records the backward rule.
template <typename Fn>
Tensor emit(Shape shape, Storage data, std::initializer_list<const Tensor*> inputs,
            Fn&& backward) {
  Tensor out = Tensor::from_storage(std::move(shape), std::move(data));
  Graph& graph = Graph::current();
  if (!graph.recording()) return out;
  bool any = false;
  for (const Tensor* t : inputs) any = any || t->requires_grad();
  if (!any) return out;
  GraphNode node;
  node.inputs.reserve(inputs.size());
  for (const Tensor* t : inputs) node.inputs.push_back(t->impl());
  node.output = out.impl();
  node.output->requires_grad = true;
  node.backward = std::forward<Fn>(backward);
  graph.record(std::move(node));
  return out;
}

template <typename Fn>
Tensor emit(Shape shape, Storage data, const std::vector<Tensor>& inputs, Fn&& backward) {
  Tensor out = Tensor::from_storage(std::move(shape), std::move(data));
  Graph& graph = Graph::current();
  if (!graph.recording()) return out;
  bool any = false;
  for (const Tensor& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  GraphNode node;
  node.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) node.inputs.push_back(t.impl());
  node.output = out.impl();
  node.output->requires_grad = true;
  node.backward = std::forward<Fn>(backward);
  graph.record(std::move(node));
  return out;
}

// Splits shape around axis into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace attnrl::detail

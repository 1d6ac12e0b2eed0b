// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// Every op records itself on the calling thread's Graph when at least one
// input requires a gradient and recording is enabled. backward() replays the
// tape once in reverse and then clears it; there is no graph reuse.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace attnrl {

using Shape = std::vector<std::size_t>;

// Tensor storage is 64-byte aligned. Vectorized kernels peel their loops by
// pointer alignment, so with malloc's 16-byte alignment the same inputs
// could round differently from run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlignment = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlignment}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kAlignment}); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised for incompatible shapes; the message names every shape involved.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a caller breaks an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised for inputs outside a function's mathematical domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct TensorImpl {
  Shape shape;
  Storage data;
  Storage grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
  bool detached = false;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor from_impl(std::shared_ptr<TensorImpl> impl);
  static Tensor from_storage(Shape shape, Storage values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Direct write access. Only for leaves (parameter updates, fresh buffers);
  // writing into a recorded tensor invalidates its backward rule.
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on = true);
  bool is_detached() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Copy of the values that never participates in differentiation.
  Tensor detach() const;
  // Deep copy that keeps requires_grad (used to clone parameters).
  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Graph (tape)

struct GraphNode {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<TensorImpl> output;
  std::function<void(GraphNode&)> backward;
};

class Graph {
 public:
  // Per-thread tape. Actors and the learner each see their own.
  static Graph& current();

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  void record(GraphNode node);
  std::size_t size() const { return nodes_.size(); }
  void reset();

  // Populates .grad on every requires_grad leaf reachable from loss and
  // clears the tape.
  void backward(const Tensor& loss);

 private:
  std::vector<GraphNode> nodes_;
  bool recording_ = true;
};

void backward(const Tensor& loss);

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(Graph::current().recording()) { Graph::current().set_recording(false); }
  ~NoGradGuard() { Graph::current().set_recording(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Gradient buffer of impl, allocated as zeros on first use.
Storage& grad_buffer(TensorImpl& impl);

// ---------------------------------------------------------------------------
// Elementwise and structural ops

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

// a[..., n] + row[n] (broadcast over leading dimensions)
Tensor add_row(const Tensor& a, const Tensor& row);
// a[..., n] * row[n]
Tensor mul_row(const Tensor& a, const Tensor& row);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // rank 2
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
// Rows idx[i] of a[n x m] gathered column-wise: out[i] = a[i, idx[i]].
Tensor gather_columns(const Tensor& a, const std::vector<std::size_t>& idx);
// Rows idx[i] of a along the first axis; repeated indices accumulate gradient.
Tensor index_rows(const Tensor& a, const std::vector<std::size_t>& idx);
// Entries where allowed[k] == 0 are replaced by value; no gradient flows there.
Tensor masked_fill(const Tensor& a, const std::vector<std::uint8_t>& allowed, double value);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b);     // [m x k] . [k x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m x k] . [n x k]^T
Tensor bmm(const Tensor& a, const Tensor& b);        // [b x m x k] . [b x k x n]
Tensor bmm_nt(const Tensor& a, const Tensor& b);     // [b x m x k] . [b x n x k]^T

// ---------------------------------------------------------------------------
// Neural-network primitives

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, std::size_t axis,
                  double eps = 1e-8);

enum class Activation { relu, gelu, sigmoid, tanh, exp, log };
Tensor activation(Activation kind, const Tensor& x);
inline Tensor relu(const Tensor& x) { return activation(Activation::relu, x); }
inline Tensor gelu(const Tensor& x) { return activation(Activation::gelu, x); }
inline Tensor sigmoid(const Tensor& x) { return activation(Activation::sigmoid, x); }
inline Tensor tanh(const Tensor& x) { return activation(Activation::tanh, x); }

// x is [C x H x W] or [B x C x H x W]; kernels [C_out x C_in x kh x kw].
Tensor conv2d(const Tensor& x, const Tensor& kernels, std::size_t stride, std::size_t padding);
Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride,
              std::size_t padding);
// Non-overlapping max pooling with window == stride == size.
Tensor max_pool2d(const Tensor& x, std::size_t size);

}  // namespace attnrl

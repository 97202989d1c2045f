#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "capsnlstm/tensor.hpp"

namespace capsnlstm::ad {

template <typename T>
struct Node;

template <typename T>
using BackwardFn = std::function<void(Node<T>& self)>;

/// One recorded operation (or a leaf). `seq` is the creation index on the
/// owning thread's tape; creation order is a topological order of the graph.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn<T> backward;

  // Gradient buffer, zero-allocated on first use.
  Tensor<T>& grad_buffer();
};

/// Handle to a node in a reverse-mode differentiation graph. Copies share the
/// node. A graph belongs to the thread that built it.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value);
  static Var leaf(Tensor<T> value);

  const Tensor<T>& value() const { return node_->value; }
  // Direct access for optimizers; only meaningful on leaves.
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Wraps `value` as the result of an operation over `inputs`. The backward
/// function is kept only when recording is enabled and some input needs a
/// gradient; otherwise the result is a constant. This is the extension point
/// for operations defined outside this header (squash, routing sums, ...).
template <typename T>
Var<T> record(Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn<T> backward);

/// Adds `delta` into the gradient of `node` when that node needs one.
template <typename T>
void accumulate_grad(Node<T>& node, std::span<const T> delta);

enum class Padding { kValid, kSame };

// Elementwise.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> hadamard(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> tanh(const Var<T>& a);
template <typename T> Var<T> relu(const Var<T>& a);

// Reductions to a one-element tensor.
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);

// a: [m,k] or [k]; b: [k,n]. A rank-1 left operand is a row vector and the
// result is rank-1 [n].
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
// a: [B,m,k]; b: [B,k,n] -> [B,m,n].
template <typename T> Var<T> batched_matmul(const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
// Concatenates the flattened inputs into one rank-1 tensor.
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts);
// Row i of a rank-2 tensor as a rank-1 tensor.
template <typename T> Var<T> row(const Var<T>& a, std::size_t i);
// Elements [offset, offset+length) of the flattened input as a rank-1 tensor.
template <typename T> Var<T> slice(const Var<T>& a, std::size_t offset, std::size_t length);

// input: [H,W,Cin]; kernels: [k,k,Cin,Cout] -> [H',W',Cout].
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernels, std::size_t stride, Padding padding);
// x: [..., C]; bias: [C].
template <typename T> Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias);
// input: [H,W,C].
template <typename T>
Var<T> maxpool2d(const Var<T>& input, std::size_t window, std::size_t stride, bool ceil_mode);

template <typename T> Var<T> softmax(const Var<T>& a, std::size_t axis);

// Inverted dropout; identity when !training or rate == 0.
template <typename T>
Var<T> dropout(const Var<T>& a, double rate, bool training, std::mt19937_64& rng);

/// Reverse sweep from a one-element loss. Interior gradients are reset before
/// the sweep; leaf gradients accumulate across calls.
template <typename T> void backward(const Var<T>& loss);

template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return hadamard(a, b); }

// Closed-form output extents.
std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride, Padding padding);
std::size_t pool_output_extent(std::size_t input, std::size_t window, std::size_t stride, bool ceil_mode);

}  // namespace capsnlstm::ad

// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every operation in execution order, so the node list is
// already a topological order of the computation graph. backward() walks it
// once in reverse, visiting each node exactly once. A tape and all of its
// nodes belong to one thread; independent tapes share nothing.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "pkt/tensor.hpp"

namespace pkt {

enum class UnaryOp : std::uint8_t { sigmoid, tanh, log, negate, exp };
enum class BinaryOp : std::uint8_t { add, sub, mul, matmul, concat, dot };
enum class ReduceOp : std::uint8_t { mean, max, sum };

std::string_view name(UnaryOp op) noexcept;
std::string_view name(BinaryOp op) noexcept;
std::string_view name(ReduceOp op) noexcept;

/// Handle to a node on a Tape. Cheap to copy; only meaningful for the tape that created it.
class Var {
 public:
  Var() = default;
  int id() const noexcept { return id_; }
  bool valid() const noexcept { return id_ >= 0; }

 private:
  friend class Tape;
  explicit Var(int id) : id_(id) {}
  int id_ = -1;
};

class Tape {
 public:
  /// With record_gradients=false every leaf is treated as a constant and
  /// backward() is unavailable; used for inference.
  explicit Tape(bool record_gradients = true);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  bool records_gradients() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Trainable input. Receives a gradient in backward().
  Var leaf(Tensor value);
  /// Input that never receives a gradient.
  Var constant(Tensor value);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() loss with respect to v. Zero-filled for
  /// nodes that do not depend on any leaf.
  const Tensor& grad(Var v) const;

  // Unary elementwise ops.
  Var unary(UnaryOp op, Var x);
  Var sigmoid(Var x) { return unary(UnaryOp::sigmoid, x); }
  Var tanh(Var x) { return unary(UnaryOp::tanh, x); }
  /// Throws DomainError if any input is not strictly positive.
  Var log(Var x) { return unary(UnaryOp::log, x); }
  Var negate(Var x) { return unary(UnaryOp::negate, x); }
  Var exp(Var x) { return unary(UnaryOp::exp, x); }

  Var scale(Var x, double factor);
  Var add_scalar(Var x, double offset);
  /// x^exponent for x >= 0.
  Var pow(Var x, double exponent);
  /// Clamp to [lo, hi]; the gradient is zero where the clamp is active.
  Var clamp(Var x, double lo, double hi);

  // Binary ops.
  //
  // add/sub/mul: b has the same shape as a, or b's shape equals a trailing
  //   suffix of a's shape (broadcast over leading axes).
  // matmul: [m,k]x[k,n], [B,m,k]x[B,k,n], or [B,m,k]x[k,n].
  // concat: along the last axis; leading dims must agree.
  // dot: two rank-1 tensors of equal length, producing a scalar.
  Var binary(BinaryOp op, Var a, Var b);
  Var add(Var a, Var b) { return binary(BinaryOp::add, a, b); }
  Var sub(Var a, Var b) { return binary(BinaryOp::sub, a, b); }
  Var mul(Var a, Var b) { return binary(BinaryOp::mul, a, b); }
  Var matmul(Var a, Var b) { return binary(BinaryOp::matmul, a, b); }
  Var concat(Var a, Var b) { return binary(BinaryOp::concat, a, b); }
  Var dot(Var a, Var b) { return binary(BinaryOp::dot, a, b); }

  /// Reduce along one axis. `mask`, if given, is a rank-1 0/1 tensor whose
  /// length equals the reduced axis; masked-out elements are ignored and get
  /// zero gradient. Max routes its gradient to the lowest-index maximum.
  Var reduce(Var x, ReduceOp op, std::size_t axis);
  Var reduce(Var x, ReduceOp op, std::size_t axis, const Tensor& mask);

  /// Softmax over the last axis restricted to positions where mask is 1.
  /// `mask` has the shape of `logits` or the length of its last axis. Masked
  /// positions are exactly 0. Every row needs at least one unmasked position.
  Var softmax_masked(Var logits, const Tensor& mask);

  /// Transpose of a rank-2 tensor.
  Var transpose(Var x);
  Var reshape(Var x, Shape shape);
  /// Rows of a rank-2 table, in index order: result shape [indices.size(), cols].
  Var gather_rows(Var table, std::span<const std::size_t> indices);
  /// Stack equal-shape tensors along a new axis inserted at `axis`.
  Var stack(std::span<const Var> parts, std::size_t axis = 0);
  Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length);
  /// Repeat a size-1 axis `count` times.
  Var expand(Var x, std::size_t axis, std::size_t count);

  /// Reverse pass from a scalar loss. Clears every gradient accumulator first,
  /// so repeated calls on the same graph give identical results.
  void backward(Var loss);

 private:
  enum class Kind : std::uint8_t {
    leaf,
    constant,
    unary,
    scale,
    add_scalar,
    pow,
    clamp,
    binary,
    reduce,
    softmax,
    transpose,
    reshape,
    gather,
    stack,
    slice,
    expand,
  };

  struct Node {
    Kind kind = Kind::constant;
    std::uint8_t op = 0;
    bool needs_grad = false;
    int a = -1;
    int b = -1;
    std::vector<int> inputs;          // stack
    double c0 = 0.0;                  // scale factor, offset, exponent, clamp lo
    double c1 = 0.0;                  // clamp hi
    std::size_t axis = 0;             // reduce, stack, slice, expand
    std::size_t start = 0;            // slice
    Tensor mask;                      // reduce, softmax
    std::vector<std::size_t> index;   // gather rows, reduce-max argmax
    Tensor value;
    Tensor grad;
  };

  const Node& node(Var v) const;
  Var push(Node node);
  bool any_needs_grad(std::initializer_list<int> ids) const;

  void backprop_node(const Node& n);
  void backprop_unary(const Node& n);
  void backprop_binary(const Node& n);
  void backprop_reduce(const Node& n);
  void backprop_softmax(const Node& n);
  void accumulate(int id, std::span<const double> g);
  Tensor& grad_slot(int id);

  bool record_ = true;
  std::vector<Node> nodes_;
  Tensor empty_;
};

}  // namespace pkt

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "gce/tensor.hpp"

namespace gce {

class Tape;

enum class OpKind {
  kLeaf,
  kConstant,
  kMatMul,
  kAddBias,
  kScatterAdd,
  kGatherRows,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kRelu,
  kTanh,
  kMulRows,
  kConcatCols,
  kSum,
  kRowNorm,
  kL2Norm,
  kSoftmaxCrossEntropy,
};

std::string_view op_name(OpKind kind);

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients produced by Tape::backward, indexed by the Var they belong to.
class Gradients {
 public:
  bool has(Var v) const noexcept;
  const Tensor& operator[](Var v) const;

 private:
  friend class Tape;
  std::vector<std::optional<Tensor>> grads_;
};

/// Define-by-run record of a computation.
///
/// Nodes are appended in evaluation order, so ids are already a topological
/// order. A tape is built per forward pass and consumed by backward().
class Tape {
 public:
  // Passed to each node's backward rule.
  class BackwardContext {
   public:
    const Tensor& grad_output() const { return *grad_out_; }
    const Tensor& output() const;
    const Tensor& input(std::size_t k) const;
    bool wants(std::size_t k) const;
    // Accumulator for the k-th input gradient, zero-initialised on first use.
    Tensor& grad_input(std::size_t k);

   private:
    friend class Tape;
    Tape* tape_ = nullptr;
    std::size_t node_ = 0;
    const Tensor* grad_out_ = nullptr;
    std::vector<std::optional<Tensor>>* grads_ = nullptr;
  };

  using BackwardFn = std::function<void(BackwardContext&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Recorded input. Tracked for gradients when value.requires_grad().
  Var leaf(Tensor value);
  Var constant(Tensor value);

  Var record(OpKind kind, std::initializer_list<Var> inputs, Tensor value, BackwardFn backward);
  Var record(OpKind kind, std::span<const Var> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return nodes_[id].kind; }
  std::span<const std::size_t> inputs(std::size_t id) const { return nodes_[id].inputs; }
  const Tensor& value_at(std::size_t id) const { return nodes_[id].value; }
  bool consumed() const noexcept { return consumed_; }

  // Reverse sweep from a scalar loss. The tape cannot be swept twice.
  Gradients backward(Var loss);

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    bool needs_grad = false;
    BackwardFn backward;
  };

  void check_owner(Var v) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// ---- differentiable operations -------------------------------------------

// Matrix product; both operands must be rank 2 with matching inner dimension.
Var matmul(Var a, Var b);

// Elementwise family. Operands must have equal shapes, or one of them is a
// single-element tensor that is broadcast.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double factor);
// ReLU with subgradient 0 at exactly 0.
Var relu(Var a);
Var tanh(Var a);

// x (N x h) + b (1 x h) added to every row.
Var add_bias(Var x, Var bias);
// x (N x h) with row r multiplied by g(r, 0), g is N x 1.
Var mul_rows(Var x, Var gate);

// out[i] = sum of src rows e with index[e] == i.
Var scatter_add(Var src, std::span<const std::size_t> index, std::size_t out_size);
// out[r] = src[index[r]].
Var gather_rows(Var src, std::span<const std::size_t> index);
Var concat_cols(std::span<const Var> parts);

Var sum(Var a);
Var mean(Var a);
// sqrt(sum_j a(r, j)^2 + smoothing) per row, N x 1.
Var row_norm(Var a, double smoothing);
// Euclidean norm of all entries, 1 x 1. Not smoothed.
Var l2_norm(Var a);
// Mean softmax cross-entropy of logits (G x C) against class labels.
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels);

// ---- verification ---------------------------------------------------------

using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares reverse-mode gradients of `f` against central differences.
///
/// Returns the maximum over all parameter entries of
/// |analytic - numeric| / (|analytic| + |numeric| + 1e-12). Non-finite
/// function values yield +infinity.
double finite_difference_check(const ScalarFunction& f, std::span<const Tensor> params,
                               double eps);

struct GradientCheck {
  double max_entry_error = 0.0;
  // |analytic - numeric| / (|analytic| + |numeric|) over the whole gradient
  // vector; insensitive to rounding noise on near-zero entries.
  double norm_error = 0.0;
};

GradientCheck gradient_check(const ScalarFunction& f, std::span<const Tensor> params, double eps);

}  // namespace gce

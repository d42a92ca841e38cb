#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "iclbench/tensor.hpp"

// Tape-based reverse-mode automatic differentiation over dense tensors.
//
// Ops are recorded in execution order, so the tape is already topologically
// sorted; backward() walks it once in reverse. Every recorded op checks its
// output for NaN/Inf and throws NonFiniteError.
namespace iclbench::ad {

template <class Real>
class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
template <class Real>
class Var {
 public:
  Var() = default;
  Var(Tape<Real>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<Real>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t rank() const { return shape().size(); }
  Tape<Real>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Real>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Gradients indexed by parameter index; one tensor per registered parameter.
template <class Real>
struct GradientSet {
  std::vector<Tensor<Real>> grads;

  double global_norm() const;
  std::size_t size() const { return grads.size(); }
};

template <class Real>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<Real>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Real> constant(Tensor<Real> value);
  // Differentiable input that is not a model parameter.
  Var<Real> leaf(Tensor<Real> value);
  Var<Real> parameter(std::size_t index, Tensor<Real> value);

  // Appends an op result. It requires grad when any parent does; `fn` is
  // dropped otherwise.
  Var<Real> record(std::string_view op, Tensor<Real> value,
                   std::initializer_list<Var<Real>> parents, BackwardFn fn);
  Var<Real> record(std::string_view op, Tensor<Real> value, std::span<const Var<Real>> parents,
                   BackwardFn fn);

  const Tensor<Real>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(const Var<Real>& v) const { return nodes_.at(v.id()).requires_grad; }

  // Gradient accumulator of `v` (zero-initialised on first use), or null
  // when `v` does not require grad. Only meaningful inside backward.
  Tensor<Real>* grad_target(const Var<Real>& v);
  // Gradient of the last backward() w.r.t. any node; empty if none reached it.
  const Tensor<Real>& grad(const Var<Real>& v) const { return nodes_.at(v.id()).grad; }

  // Throws NotScalarError unless loss has one element, DetachedNodeError if
  // loss belongs to another tape.
  GradientSet<Real> backward(const Var<Real>& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    BackwardFn backward;
    bool requires_grad = false;
    std::optional<std::size_t> param_index;
  };

  Var<Real> push(Node node);
  std::vector<Node> nodes_;
};

template <class Real>
const Tensor<Real>& Var<Real>::value() const {
  if (!tape_) throw DetachedNodeError("value() on an unbound Var");
  return tape_->value(id_);
}

// Primitives. Binary elementwise ops broadcast when one operand's shape is a
// suffix of the other's (e.g. [B, T, d] with [d] or [T, d]).
template <class Real> Var<Real> matmul(const Var<Real>& a, const Var<Real>& b);
template <class Real> Var<Real> add(const Var<Real>& a, const Var<Real>& b);
template <class Real> Var<Real> sub(const Var<Real>& a, const Var<Real>& b);
template <class Real> Var<Real> mul(const Var<Real>& a, const Var<Real>& b);
template <class Real> Var<Real> scale(const Var<Real>& a, Real c);
template <class Real> Var<Real> add_scalar(const Var<Real>& a, Real c);
template <class Real> Var<Real> relu(const Var<Real>& a);
template <class Real> Var<Real> square(const Var<Real>& a);
template <class Real> Var<Real> exp(const Var<Real>& a);
// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <class Real> Var<Real> gelu(const Var<Real>& a);
template <class Real> Var<Real> softmax(const Var<Real>& a);
template <class Real>
Var<Real> layer_norm(const Var<Real>& x, const Var<Real>& gamma, const Var<Real>& beta,
                     Real eps = Real(1e-5));
template <class Real> Var<Real> sum(const Var<Real>& a);
template <class Real> Var<Real> mean(const Var<Real>& a);
template <class Real> Var<Real> transpose(const Var<Real>& a, std::size_t axis0, std::size_t axis1);
template <class Real> Var<Real> reshape(const Var<Real>& a, Shape shape);
template <class Real> Var<Real> concat(std::span<const Var<Real>> parts, std::size_t axis);
template <class Real>
Var<Real> slice(const Var<Real>& a, std::size_t axis, std::size_t start, std::size_t stop,
                std::size_t step = 1);

// Value-level helpers shared with the attention module.
template <class Real>
Tensor<Real> transpose_value(const Tensor<Real>& a, std::size_t axis0, std::size_t axis1);

}  // namespace iclbench::ad

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "adair/errors.hpp"

namespace adair {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

template <typename Scalar>
struct TensorStorage {
  Shape shape;
  ArrayX<Scalar> data;
  ArrayX<Scalar> grad;  // size 0 when no gradient has been populated
  bool requires_grad = false;
  bool is_leaf = true;
};

}  // namespace detail

/// Dense row-major N-d array with an optional gradient slot.
///
/// Copies share storage (handle semantics), so a parameter tensor held by two
/// layers is one parameter. Use detach() for an independent deep copy.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;
  using Array = ArrayX<Scalar>;

  Tensor() = default;

  explicit Tensor(Shape shape)
      : impl_(std::make_shared<detail::TensorStorage<Scalar>>()) {
    impl_->data = Array::Zero(shape_numel(shape));
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, Array data)
      : impl_(std::make_shared<detail::TensorStorage<Scalar>>()) {
    if (data.size() != shape_numel(shape)) {
      fail(ErrorKind::ShapeMismatch, "data length " + std::to_string(data.size()) +
                                         " does not match shape " + shape_string(shape));
    }
    impl_->data = std::move(data);
    impl_->shape = std::move(shape);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, Scalar value) {
    const Index n = shape_numel(shape);
    return Tensor(std::move(shape), Array::Constant(n, value));
  }

  static Tensor from_values(Shape shape, std::initializer_list<Scalar> values) {
    Array data(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar v : values) data[i++] = v;
    return Tensor(std::move(shape), std::move(data));
  }

  static Tensor scalar(Scalar value) { return full({1}, value); }

  bool defined() const noexcept { return static_cast<bool>(impl_); }

  const Shape& shape() const { return impl_->shape; }
  Index rank() const { return static_cast<Index>(impl_->shape.size()); }
  Index dim(Index axis) const {
    const Index r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) fail(ErrorKind::ShapeMismatch, "axis out of range for " + shape_string(shape()));
    return impl_->shape[static_cast<std::size_t>(axis)];
  }
  Index numel() const { return impl_->data.size(); }

  const Array& data() const { return impl_->data; }
  /// Direct mutation, reserved for initializers, optimizers and loaders.
  Array& data_mut() { return impl_->data; }

  Scalar item() const {
    if (numel() != 1) fail(ErrorKind::NonScalarLoss, "item() on tensor of shape " + shape_string(shape()));
    return impl_->data[0];
  }

  Scalar at(std::initializer_list<Index> index) const { return impl_->data[offset(index)]; }

  Index offset(std::initializer_list<Index> index) const {
    if (static_cast<Index>(index.size()) != rank()) fail(ErrorKind::ShapeMismatch, "index rank mismatch");
    Index flat = 0;
    std::size_t axis = 0;
    for (Index i : index) {
      flat = flat * impl_->shape[axis] + i;
      ++axis;
    }
    return flat;
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag = true) {
    impl_->requires_grad = flag;
    return *this;
  }
  bool is_leaf() const { return impl_->is_leaf; }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size() && impl_->data.size() > 0; }
  const Array& grad() const { return impl_->grad; }
  void set_grad(Array g) {
    if (g.size() != numel()) fail(ErrorKind::ShapeMismatch, "gradient length mismatch");
    impl_->grad = std::move(g);
  }
  void zero_grad() { impl_->grad = Array::Zero(numel()); }

  Tensor detach() const { return Tensor(shape(), data()); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape(), data().template cast<Other>());
  }

  Tensor reshape(Shape new_shape) const;

  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }
  const void* id() const noexcept { return impl_.get(); }

  // Internal: used by the tape to mark op outputs.
  void mark_non_leaf() { impl_->is_leaf = false; }

 private:
  std::shared_ptr<detail::TensorStorage<Scalar>> impl_;
};

/// Thread-local switch for recording; inference wraps forwards in NoGradGuard.
bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Ordered record of differentiable operations. Backward replays in exact
/// reverse order of recording, which is a valid topological order because
/// every op is recorded after its inputs exist.
template <typename Scalar>
class Tape {
 public:
  using Array = ArrayX<Scalar>;
  /// Accumulates (+=) into each non-null grad_in slot.
  using BackwardFn = std::function<void(const Array& grad_out, std::span<Array* const> grad_in)>;

  static Tape& current() {
    thread_local Tape tape;
    return tape;
  }

  void record(Tensor<Scalar>& output, std::vector<Tensor<Scalar>> inputs, BackwardFn fn) {
    output.mark_non_leaf();
    output.set_requires_grad(true);
    for (const auto& in : inputs) {
      if (in.requires_grad() && in.is_leaf() && leaf_ids_.insert(in.id()).second) leaves_.push_back(in);
    }
    nodes_.push_back(Node{std::move(inputs), output, std::move(fn)});
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    leaves_.clear();
    leaf_ids_.clear();
  }

  /// Populates grad of every leaf seen by the tape (zero when unreachable),
  /// then clears the tape.
  void backward(const Tensor<Scalar>& loss) {
    if (loss.numel() != 1) {
      fail(ErrorKind::NonScalarLoss, "backward needs a scalar loss, got " + shape_string(loss.shape()));
    }
    std::unordered_map<const void*, Array> grads;
    grads[loss.id()] = Array::Ones(1);
    std::vector<Array*> slots;
    for (auto node = nodes_.rbegin(); node != nodes_.rend(); ++node) {
      auto found = grads.find(node->output.id());
      if (found == grads.end()) continue;
      const Array grad_out = std::move(found->second);
      grads.erase(found);
      slots.assign(node->inputs.size(), nullptr);
      for (std::size_t i = 0; i < node->inputs.size(); ++i) {
        const auto& in = node->inputs[i];
        if (!in.requires_grad()) continue;
        auto [it, inserted] = grads.try_emplace(in.id());
        if (inserted) it->second = Array::Zero(in.numel());
        slots[i] = &it->second;
      }
      node->backward(grad_out, std::span<Array* const>(slots.data(), slots.size()));
    }
    for (auto& leaf : leaves_) {
      auto found = grads.find(leaf.id());
      if (found != grads.end()) {
        leaf.set_grad(std::move(found->second));
      } else {
        leaf.zero_grad();
      }
    }
    if (loss.is_leaf() && loss.requires_grad()) {
      Tensor<Scalar> self = loss;
      self.set_grad(Array::Ones(1));
    }
    clear();
  }

 private:
  struct Node {
    std::vector<Tensor<Scalar>> inputs;
    Tensor<Scalar> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor<Scalar>> leaves_;
  std::unordered_set<const void*> leaf_ids_;
};

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  Tape<Scalar>::current().backward(loss);
}

/// Throws NonFinite if any element is NaN or infinite.
template <typename Scalar>
void check_finite(const ArrayX<Scalar>& values, const char* op) {
  if (!values.allFinite()) fail(ErrorKind::NonFinite, std::string("non-finite value produced by ") + op);
}

/// Finalizes an op result: checks finiteness and records the backward closure
/// when recording is on and some input requires grad.
template <typename Scalar>
Tensor<Scalar> finish_op(Tensor<Scalar> out, std::vector<Tensor<Scalar>> inputs,
                         typename Tape<Scalar>::BackwardFn fn, const char* op) {
  check_finite(out.data(), op);
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) Tape<Scalar>::current().record(out, std::move(inputs), std::move(fn));
  return out;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshape(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    fail(ErrorKind::ShapeMismatch, "cannot reshape " + shape_string(shape()) + " to " + shape_string(new_shape));
  }
  Tensor out(std::move(new_shape), data());
  return finish_op<Scalar>(
      out, {*this},
      [](const Array& g, std::span<Array* const> gi) {
        if (gi[0]) *gi[0] += g;
      },
      "reshape");
}

}  // namespace adair

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ila/engine/tensor.hpp"

namespace ila::engine {

/// Named model weight. `trainable` is false for buffers such as batch-norm
/// running statistics and the fixed input normalization constants.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  void zero_grad() { grad = Tensor<T>::zeros(value.shape()); }
};

template <class T>
class Tape;

/// Handle to one record of a tape. Cheap to copy; valid while the tape lives.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of primitive applications. Records are appended in
/// execution order, so every input of record k has an index below k and a
/// single reverse sweep visits each record once.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Record {
    std::string_view op;
    std::vector<std::size_t> inputs;
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Parameter<T>* sink = nullptr;
    bool requires_grad = false;
    Tensor<T> grad;
    BackwardFn backward;

    const Tensor<T>& value() const { return external ? *external : owned; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding a copy of `value`.
  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    Record r;
    r.op = "leaf";
    r.owned = std::move(value);
    r.requires_grad = requires_grad;
    return push(std::move(r));
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Leaf that reads a parameter in place. When `track` is set the gradient
  /// reaching this leaf is added to `p.grad` at the end of backward().
  Var<T> parameter(Parameter<T>& p, bool track) {
    Record r;
    r.op = "parameter";
    r.external = &p.value;
    r.requires_grad = track;
    r.sink = track ? &p : nullptr;
    return push(std::move(r));
  }

  /// Read-only view of a parameter; never receives gradient.
  Var<T> parameter(const Parameter<T>& p) {
    Record r;
    r.op = "parameter";
    r.external = &p.value;
    return push(std::move(r));
  }

  /// Append the result of a primitive. The backward closure is dropped when
  /// no input requires grad, so inference-only passes save nothing.
  Var<T> record(std::string_view op, std::vector<std::size_t> inputs,
                Tensor<T> value, BackwardFn backward) {
    Record r;
    r.op = op;
    r.owned = std::move(value);
    for (std::size_t in : inputs) {
      if (in >= records_.size()) {
        throw UsageError(std::string(op) + ": input record " +
                         std::to_string(in) + " is not on this tape");
      }
      r.requires_grad = r.requires_grad || records_[in].requires_grad;
    }
    if (r.requires_grad) r.backward = std::move(backward);
    r.inputs = std::move(inputs);
    return push(std::move(r));
  }

  bool any_requires_grad(std::initializer_list<Var<T>> vars) const {
    for (const auto& v : vars) {
      if (v.valid() && records_.at(v.id()).requires_grad) return true;
    }
    return false;
  }

  /// Reverse sweep from a scalar root. Gradients accumulate into the tape's
  /// grad slots and, for tracked parameters, into Parameter::grad.
  void backward(Var<T> root) {
    if (&root.tape() != this) {
      throw UsageError("backward: root belongs to a different tape");
    }
    if (value(root.id()).numel() != 1) {
      throw UsageError("backward: root must be scalar, got shape " +
                       shape_str(value(root.id()).shape()));
    }
    for (auto& r : records_) r.grad = Tensor<T>();
    grad_slot(root.id()).fill(T{1});
    for (std::size_t k = root.id() + 1; k-- > 0;) {
      Record& r = records_[k];
      if (!r.requires_grad || r.grad.empty() || !r.backward) continue;
      r.backward(*this, k);
    }
    for (auto& r : records_) {
      if (!r.sink || r.grad.empty()) continue;
      auto& g = r.sink->grad;
      if (g.shape() != r.grad.shape()) g = Tensor<T>::zeros(r.grad.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += r.grad[i];
    }
  }

  const Tensor<T>& value(std::size_t id) const {
    return records_.at(id).value();
  }
  bool requires_grad(std::size_t id) const {
    return records_.at(id).requires_grad;
  }
  std::size_t input(std::size_t id, std::size_t slot) const {
    return records_.at(id).inputs.at(slot);
  }
  std::size_t num_inputs(std::size_t id) const {
    return records_.at(id).inputs.size();
  }
  std::string_view op(std::size_t id) const { return records_.at(id).op; }
  std::size_t size() const noexcept { return records_.size(); }

  /// Gradient of the last backward() root with respect to `v`; all zeros if
  /// `v` did not influence the root.
  Tensor<T> grad(Var<T> v) const {
    const Record& r = records_.at(v.id());
    if (r.grad.empty()) return Tensor<T>::zeros(r.value().shape());
    return r.grad;
  }

  /// Incoming gradient of record `id` (allocated by backward()).
  const Tensor<T>& out_grad(std::size_t id) const {
    return records_.at(id).grad;
  }

  /// Mutable gradient slot, zero-initialized on first touch. Null when the
  /// record does not require grad so backward rules can skip work.
  Tensor<T>* accumulate_into(std::size_t id) {
    Record& r = records_.at(id);
    if (!r.requires_grad) return nullptr;
    return &grad_slot(id);
  }

 private:
  Tensor<T>& grad_slot(std::size_t id) {
    Record& r = records_[id];
    if (r.grad.empty()) r.grad = Tensor<T>::zeros(r.value().shape());
    return r.grad;
  }

  Var<T> push(Record r) {
    records_.push_back(std::move(r));
    return Var<T>(this, records_.size() - 1);
  }

  std::vector<Record> records_;
};

}  // namespace ila::engine

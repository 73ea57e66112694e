#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "heatlens/common.hpp"

namespace heatlens {

template <typename T>
class Tape;
template <typename T>
class Gradients;

// Dense row-major real tensor. Buffers are immutable after construction;
// "updating" a tensor means building a new one. A tensor is either a free
// constant or bound to a node on a Tape, in which case every op that
// consumes it is recorded for reverse-mode differentiation.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<const std::vector<T>>(std::move(values))) {
    if (numel(shape_) != data_->size())
      fail_shape("Tensor", "shape " + shape_str(shape_) + " wants " +
                               std::to_string(numel(shape_)) + " values, got " +
                               std::to_string(data_->size()));
  }

  static Tensor scalar(T v) { return Tensor({}, {v}); }
  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
  static Tensor full(Shape shape, T v) {
    std::vector<T> vals(numel(shape), v);
    return Tensor(std::move(shape), std::move(vals));
  }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  const std::vector<T>& values() const { return *data_; }
  const std::shared_ptr<const std::vector<T>>& data() const { return data_; }
  T operator[](std::size_t i) const { return (*data_)[i]; }

  T item() const {
    if (size() != 1) fail_shape("item", "tensor " + shape_str(shape_) + " is not a scalar");
    return (*data_)[0];
  }

  bool on_tape() const { return tape_ != nullptr; }
  Tape<T>* tape() const { return tape_; }
  int node() const { return node_; }

  // same buffer, no tape linkage
  Tensor detached() const {
    Tensor out = *this;
    out.tape_ = nullptr;
    out.node_ = -1;
    return out;
  }

 private:
  friend class Tape<T>;
  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
  Tape<T>* tape_ = nullptr;
  int node_ = -1;
};

template <typename T>
using NamedTensors = std::map<std::string, Tensor<T>>;

// Reverse-mode tape: an append-only list of operation records. Inputs of a
// node are always recorded before the node itself (topological order by
// construction), so the reverse sweep is a single backwards pass that visits
// each node at most once, in a fixed order; gradients are therefore
// bit-reproducible across runs.
template <typename T>
class Tape {
 public:
  // One grad sink per recorded input, in recording order. Repeated inputs
  // alias the same sink and accumulate twice.
  using GradSinks = std::vector<std::vector<T>*>;
  using BackwardFn = std::function<void(const std::vector<T>& upstream, const GradSinks& sinks)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Register a parameter. The returned tensor shares the value buffer and is
  // the handle gradients are looked up by.
  Tensor<T> leaf(const Tensor<T>& value) {
    Tensor<T> out = value;
    out.tape_ = this;
    out.node_ = add_node(value.shape(), {}, nullptr);
    return out;
  }

  Tensor<T> record(Shape shape, std::vector<T> values, std::vector<int> inputs, BackwardFn fn) {
    Tensor<T> out(std::move(shape), std::move(values));
    out.tape_ = this;
    out.node_ = add_node(out.shape(), std::move(inputs), std::move(fn));
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

  Gradients<T> backward(const Tensor<T>& loss) const;

 private:
  struct Node {
    Shape shape;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  int add_node(Shape shape, std::vector<int> inputs, BackwardFn fn) {
    nodes_.push_back(Node{std::move(shape), std::move(inputs), std::move(fn)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;

  friend class Gradients<T>;
};

template <typename T>
class Gradients {
 public:
  // Gradient of the swept loss w.r.t. a tensor on the tape. Leaves never
  // reached by the loss get a zero gradient of their own shape.
  Tensor<T> at(const Tensor<T>& t) const {
    require_on_tape(t);
    const auto& g = grads_[static_cast<std::size_t>(t.node())];
    if (g.empty()) return Tensor<T>::zeros(t.shape());
    return Tensor<T>(t.shape(), g);
  }

  bool reached(const Tensor<T>& t) const {
    require_on_tape(t);
    return !grads_[static_cast<std::size_t>(t.node())].empty();
  }

 private:
  friend class Tape<T>;
  explicit Gradients(const Tape<T>* tape) : tape_(tape), grads_(tape->nodes_.size()) {}

  void require_on_tape(const Tensor<T>& t) const {
    if (t.tape() != tape_ || t.node() < 0)
      fail_value("Gradients::at", "tensor is not on the swept tape");
  }

  const Tape<T>* tape_;
  std::vector<std::vector<T>> grads_;
};

template <typename T>
Gradients<T> Tape<T>::backward(const Tensor<T>& loss) const {
  if (loss.tape() != this) fail_value("backward", "loss is not on this tape");
  if (loss.size() != 1)
    fail_shape("backward", "loss must be scalar, got " + shape_str(loss.shape()));

  Gradients<T> out(this);
  auto& grads = out.grads_;
  grads[static_cast<std::size_t>(loss.node())] = {T(1)};
  for (int i = loss.node(); i >= 0; --i) {
    const Node& node = nodes_[static_cast<std::size_t>(i)];
    const auto& upstream = grads[static_cast<std::size_t>(i)];
    if (upstream.empty() || !node.backward) continue;
    GradSinks sinks;
    sinks.reserve(node.inputs.size());
    for (int in : node.inputs) {
      auto& buf = grads[static_cast<std::size_t>(in)];
      if (buf.empty()) buf.assign(numel(nodes_[static_cast<std::size_t>(in)].shape), T(0));
      sinks.push_back(&buf);
    }
    node.backward(upstream, sinks);
  }
  return out;
}

}  // namespace heatlens

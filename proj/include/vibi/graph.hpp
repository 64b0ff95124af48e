#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vibi/errors.hpp"
#include "vibi/tensor.hpp"

namespace vibi {

template <typename T>
class Graph;

/// Handle to a node of one Graph. Cheap to copy; only valid while its graph lives.
template <typename T>
struct Var {
  using value_type = T;

  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the record
/// list is topologically sorted by construction and backward walks it in
/// exact reverse.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that does not receive a gradient.
  Var<T> constant(BasicTensor<T> value) { return push(std::move(value), false, {}, {}); }

  /// Differentiable leaf (input or parameter).
  Var<T> leaf(BasicTensor<T> value) { return push(std::move(value), true, {}, {}); }

  /// Appends an op record. `backward` runs only when some input requires grad.
  Var<T> record(BasicTensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward,
                std::string kind = {}) {
    bool needs = false;
    for (auto in : inputs) {
      check_id(in);
      needs = needs || nodes_[in].requires_grad;
    }
    auto v = push(std::move(value), needs, std::move(inputs), needs ? std::move(backward) : nullptr);
    nodes_[v.id].kind = std::move(kind);
    return v;
  }

  const BasicTensor<T>& value(std::size_t id) const {
    check_id(id);
    return nodes_[id].value;
  }
  const BasicTensor<T>& value(Var<T> v) const { return value(own(v)); }

  bool requires_grad(std::size_t id) const {
    check_id(id);
    return nodes_[id].requires_grad;
  }
  bool requires_grad(Var<T> v) const { return requires_grad(own(v)); }

  /// Gradient buffer of a node after backward(); zeros if nothing flowed into it.
  const BasicTensor<T>& grad(Var<T> v) {
    auto id = own(v);
    ensure_grad(id);
    return nodes_[id].grad;
  }

  /// Upstream gradient of `id` during backward.
  const BasicTensor<T>& upstream(std::size_t id) const { return nodes_[id].grad; }

  /// Additive accumulation into the gradient of `id` (fan-out sums).
  void accumulate(std::size_t id, std::span<const T> g) {
    if (!nodes_[id].requires_grad) {
      return;
    }
    ensure_grad(id);
    auto dst = nodes_[id].grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] += g[i];
    }
  }

  /// Mutable gradient buffer for ops that scatter into it; null when `id` takes no grad.
  BasicTensor<T>* grad_buffer(std::size_t id) {
    if (!nodes_[id].requires_grad) {
      return nullptr;
    }
    ensure_grad(id);
    return &nodes_[id].grad;
  }

  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every differentiable node.
  void backward(Var<T> loss) {
    auto id = own(loss);
    if (nodes_[id].value.size() != 1) {
      throw InvalidArgument("backward: loss must be scalar, got shape " +
                            shape_str(nodes_[id].value.shape()));
    }
    for (auto& n : nodes_) {
      n.grad = BasicTensor<T>();
      n.has_grad = false;
    }
    if (!nodes_[id].requires_grad) {
      return;
    }
    ensure_grad(id);
    nodes_[id].grad[0] = T{1};
    for (std::size_t i = id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.has_grad && n.backward) {
        n.backward(*this, i);
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }
  const std::string& kind(std::size_t id) const { return nodes_.at(id).kind; }

  std::size_t own(Var<T> v) const {
    if (v.graph != this) {
      throw LookupError("graph: node belongs to a different graph");
    }
    check_id(v.id);
    return v.id;
  }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::string kind;
  };

  Var<T> push(BasicTensor<T> value, bool requires_grad, std::vector<std::size_t> inputs,
              BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  void check_id(std::size_t id) const {
    if (id >= nodes_.size()) {
      throw LookupError("graph: node id " + std::to_string(id) + " not in graph");
    }
  }

  void ensure_grad(std::size_t id) {
    auto& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = BasicTensor<T>(n.value.shape(), T{0});
      n.has_grad = true;
    }
  }

  std::vector<Node> nodes_;
};

template <typename T>
const BasicTensor<T>& Var<T>::value() const {
  if (graph == nullptr) {
    throw LookupError("var: detached handle");
  }
  return graph->value(*this);
}

}  // namespace vibi

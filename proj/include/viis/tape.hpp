#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "viis/tensor.hpp"

namespace viis {

/// Reverse-mode op tape. Ops execute forward eagerly and push a closure that
/// scatters the output gradient back to its inputs; backward() replays the
/// closures in reverse. A tape is confined to one execution context; leaves
/// that never influence the loss keep their exact-zero gradient.
template <typename S>
class Tape {
 public:
  using Var = int;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor<S> v) {
    nodes_.push_back(Node{std::move(v), Tensor<S>()});
    Node& n = nodes_.back();
    n.grad = Tensor<S>(n.value.shape);
    return static_cast<Var>(nodes_.size() - 1);
  }

  const Tensor<S>& val(Var v) const { return nodes_[static_cast<size_t>(v)].value; }
  Tensor<S>& grad(Var v) { return nodes_[static_cast<size_t>(v)].grad; }
  const Tensor<S>& grad(Var v) const { return nodes_[static_cast<size_t>(v)].grad; }

  void record(std::function<void()> bw) { ops_.push_back(std::move(bw)); }

  void backward(Var loss) {
    if (val(loss).size() != 1) throw DimError("backward: loss must be scalar");
    grad(loss).data[0] = S(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
  };
  std::deque<Node> nodes_;  // deque: references stay valid across growth
  std::vector<std::function<void()>> ops_;
};

}  // namespace viis

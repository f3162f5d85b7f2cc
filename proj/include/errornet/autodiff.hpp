#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "errornet/error.hpp"
#include "errornet/tensor.hpp"

namespace errornet {

// One recorded operation. `backward` reads the output's grad buffer and
// accumulates into the inputs' grad buffers.
template <typename T>
struct Node {
  const char* kind = "";
  std::vector<Tensor<T>> inputs;
  std::weak_ptr<TensorStorage<T>> out;
  std::function<void(TensorStorage<T>&)> backward;
  const void* owner = nullptr;
};

// Reverse-mode tape. Nodes are appended in execution order, which is a
// topological order by construction; backward replays the list in reverse.
// A graph is activated with Graph::Scope; operations executed while no graph
// is active run in pure inference mode and record nothing.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void record(std::shared_ptr<Node<T>> n) {
    n->owner = this;
    nodes_.push_back(std::move(n));
  }

  // Populates grads of every requires_grad tensor reachable from `loss`.
  // Tensors are shared handles, so pass-by-value accepts temporaries.
  void backward(Tensor<T> loss) {
    if (consumed_)
      throw UsageError("backward called twice on the same graph");
    if (!loss.defined() || loss.numel() != 1)
      throw UsageError("backward requires a scalar loss");
    auto st = loss.storage_ptr();
    if (!st->node || st->node->owner != this)
      throw UsageError("loss was not produced by this graph");
    consumed_ = true;
    loss.grad_mut()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>& n = **it;
      auto out = n.out.lock();
      if (!out || out->grad.empty()) continue;  // not reachable from loss
      n.backward(*out);
    }
  }

  static Graph*& current() {
    static thread_local Graph* cur = nullptr;
    return cur;
  }

  class Scope {
   public:
    explicit Scope(Graph& g) : prev_(current()) { current() = &g; }
    ~Scope() { current() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph* prev_;
  };

 private:
  std::vector<std::shared_ptr<Node<T>>> nodes_;
  bool consumed_ = false;
};

namespace detail {

// Should this op record a node? Only when a graph is active and some input
// carries a gradient requirement.
template <typename T>
inline bool recording(std::initializer_list<const Tensor<T>*> ins) {
  if (Graph<T>::current() == nullptr) return false;
  for (const Tensor<T>* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

template <typename T>
inline void record_node(const char* kind, std::vector<Tensor<T>> inputs,
                        Tensor<T>& out,
                        std::function<void(TensorStorage<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->kind = kind;
  node->inputs = std::move(inputs);
  node->out = out.storage_ptr();
  node->backward = std::move(backward);
  out.storage().node = node;
  out.set_requires_grad(true);
  Graph<T>::current()->record(std::move(node));
}

}  // namespace detail

}  // namespace errornet

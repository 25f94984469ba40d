#pragma once

#include <deque>
#include <functional>
#include <unordered_map>
#include <vector>

#include "evtrack/tensor.hpp"

namespace evtrack::ad {

// Per-backward-pass adjoint buffers. Each backward() call works on a fresh
// Adjoints instance and only folds the result into Tensor::grad at the end,
// so running backward twice accumulates exactly twice the gradients.
class Adjoints {
 public:
  // Zero-initialized buffer for t, created on demand.
  std::vector<double>& of(const TensorPtr& t);

  // Null when the tensor has no adjoint yet (treated as all-zero).
  const std::vector<double>* find(const Tensor* t) const;

  // grad += adjoint for every touched tensor with requires_grad.
  void fold_into_grads();

 private:
  struct Entry {
    TensorPtr tensor;
    std::vector<double> adj;
  };
  std::unordered_map<const Tensor*, size_t> index_;
  // deque: buffers handed out by of()/find() stay valid as entries grow
  std::deque<Entry> entries_;
};

// Linear record of primitive applications. Ops append a backward closure as
// they execute, which keeps the list topologically ordered by construction.
class Tape {
 public:
  using BackwardFn = std::function<void(Adjoints&)>;

  void record(BackwardFn fn) { nodes_.push_back(std::move(fn)); }
  size_t node_count() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Throws
  // ContractError unless loss is scalar.
  void backward(const TensorPtr& loss);

 private:
  std::vector<BackwardFn> nodes_;
};

}  // namespace evtrack::ad

#include "evtrack/tape.hpp"

namespace evtrack::ad {

std::vector<double>& Adjoints::of(const TensorPtr& t) {
  auto it = index_.find(t.get());
  if (it != index_.end()) return entries_[it->second].adj;
  index_.emplace(t.get(), entries_.size());
  entries_.push_back(Entry{t, std::vector<double>(t->values.size(), 0.0)});
  return entries_.back().adj;
}

const std::vector<double>* Adjoints::find(const Tensor* t) const {
  auto it = index_.find(t);
  return it == index_.end() ? nullptr : &entries_[it->second].adj;
}

void Adjoints::fold_into_grads() {
  for (auto& e : entries_) {
    if (!e.tensor->requires_grad) continue;
    e.tensor->ensure_grad();
    auto& g = e.tensor->grad;
    for (size_t i = 0; i < g.size(); ++i) g[i] += e.adj[i];
  }
}

void Tape::backward(const TensorPtr& loss) {
  if (!loss || !loss->is_scalar()) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  Adjoints adj;
  adj.of(loss)[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(adj);
  adj.fold_into_grads();
}

}  // namespace evtrack::ad

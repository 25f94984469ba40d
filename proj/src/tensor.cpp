#include "evtrack/tensor.hpp"

#include <sstream>

namespace evtrack::ad {

Tensor::Tensor(std::vector<int64_t> s, double fill, bool rg)
    : shape(std::move(s)), requires_grad(rg) {
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape));
  }
  values.assign(static_cast<size_t>(numel(shape)), fill);
}

int64_t Tensor::dim(size_t i) const {
  if (i >= shape.size()) {
    throw ShapeError("dim index " + std::to_string(i) + " out of rank " +
                     std::to_string(shape.size()));
  }
  return shape[i];
}

void Tensor::ensure_grad() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
}

void Tensor::zero_grad() { grad.assign(values.size(), 0.0); }

int64_t Tensor::numel(const std::vector<int64_t>& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

TensorPtr make_tensor(std::vector<int64_t> shape, double fill, bool requires_grad) {
  return std::make_shared<Tensor>(std::move(shape), fill, requires_grad);
}

TensorPtr make_tensor(std::vector<int64_t> shape, std::vector<double> values,
                      bool requires_grad) {
  auto t = std::make_shared<Tensor>(std::move(shape), 0.0, requires_grad);
  if (static_cast<int64_t>(values.size()) != t->size()) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not fill shape " + shape_str(t->shape));
  }
  t->values = std::move(values);
  return t;
}

std::string shape_str(const std::vector<int64_t>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(where) + ": shape mismatch " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
  }
}

}  // namespace evtrack::ad

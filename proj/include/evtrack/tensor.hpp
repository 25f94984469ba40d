#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "evtrack/errors.hpp"

namespace evtrack::ad {

// Dense row-major f64 tensor. Gradients live beside the values; `grad`
// stays empty until a backward pass touches the tensor.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;

  Tensor() = default;
  Tensor(std::vector<int64_t> s, double fill, bool rg);

  int64_t size() const { return static_cast<int64_t>(values.size()); }
  size_t rank() const { return shape.size(); }
  int64_t dim(size_t i) const;
  bool is_scalar() const { return size() == 1; }

  void ensure_grad();
  void zero_grad();

  static int64_t numel(const std::vector<int64_t>& s);
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(std::vector<int64_t> shape, double fill = 0.0,
                      bool requires_grad = false);
TensorPtr make_tensor(std::vector<int64_t> shape, std::vector<double> values,
                      bool requires_grad = false);

std::string shape_str(const std::vector<int64_t>& s);

// Throws ShapeError mentioning both shapes when they differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

}  // namespace evtrack::ad

#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "evtrack/tensor.hpp"

namespace evtrack::ad {

// Named learnable tensors in deterministic creation order. Every entry has
// requires_grad set; optimizer and serialization iterate in this order.
class ParameterStore {
 public:
  explicit ParameterStore(uint64_t seed = 0) : rng_seed(seed) {}

  TensorPtr create(const std::string& name, std::vector<int64_t> shape);
  TensorPtr get(const std::string& name) const;
  bool has(const std::string& name) const { return map_.count(name) > 0; }
  const std::vector<std::string>& names() const { return order_; }
  size_t count() const { return order_.size(); }
  int64_t total_size() const;
  void zero_grads();

  uint64_t rng_seed = 0;

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, TensorPtr> map_;
};

void glorot_uniform(Tensor& t, int64_t fan_in, int64_t fan_out, std::mt19937_64& rng);

// Deterministic stream splitter for deriving independent sub-seeds.
uint64_t mix_seed(uint64_t seed, uint64_t stream);

// Binary record helpers shared by the checkpoint format: little-endian
// scalars, then per tensor: u32 name length, name bytes, u32 rank,
// u64 dims, f64 values.
void write_u32(std::ostream& os, uint32_t v);
void write_u64(std::ostream& os, uint64_t v);
void write_f64(std::ostream& os, double v);
void write_bytes(std::ostream& os, const void* p, size_t n);
void write_string(std::ostream& os, const std::string& s);
void write_named_array(std::ostream& os, const std::string& name,
                       const std::vector<int64_t>& shape,
                       const std::vector<double>& values);

uint32_t read_u32(std::istream& is);
uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
std::string read_string(std::istream& is);
struct NamedArray {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<double> values;
};
NamedArray read_named_array(std::istream& is);

}  // namespace evtrack::ad

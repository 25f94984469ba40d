#include "evtrack/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace evtrack::ad {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; add byte swapping for this target");

TensorPtr ParameterStore::create(const std::string& name, std::vector<int64_t> shape) {
  if (map_.count(name)) throw ContractError("parameter '" + name + "' already exists");
  auto t = make_tensor(std::move(shape), 0.0, true);
  order_.push_back(name);
  map_.emplace(name, t);
  return t;
}

TensorPtr ParameterStore::get(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

int64_t ParameterStore::total_size() const {
  int64_t n = 0;
  for (const auto& name : order_) n += map_.at(name)->size();
  return n;
}

void ParameterStore::zero_grads() {
  for (const auto& name : order_) map_.at(name)->zero_grad();
}

void glorot_uniform(Tensor& t, int64_t fan_in, int64_t fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> uni(-a, a);
  for (auto& v : t.values) v = uni(rng);
}

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  // splitmix64 finalizer over the combined words
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void write_u32(std::ostream& os, uint32_t v) { write_bytes(os, &v, sizeof v); }
void write_u64(std::ostream& os, uint64_t v) { write_bytes(os, &v, sizeof v); }
void write_f64(std::ostream& os, double v) { write_bytes(os, &v, sizeof v); }

void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

void write_named_array(std::ostream& os, const std::string& name,
                       const std::vector<int64_t>& shape,
                       const std::vector<double>& values) {
  write_string(os, name);
  write_u32(os, static_cast<uint32_t>(shape.size()));
  for (int64_t d : shape) write_u64(os, static_cast<uint64_t>(d));
  write_bytes(os, values.data(), values.size() * sizeof(double));
}

namespace {
void read_exact(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) {
    throw FormatError("unexpected end of file");
  }
}
}  // namespace

uint32_t read_u32(std::istream& is) {
  uint32_t v;
  read_exact(is, &v, sizeof v);
  return v;
}

uint64_t read_u64(std::istream& is) {
  uint64_t v;
  read_exact(is, &v, sizeof v);
  return v;
}

double read_f64(std::istream& is) {
  double v;
  read_exact(is, &v, sizeof v);
  return v;
}

std::string read_string(std::istream& is) {
  const uint32_t n = read_u32(is);
  if (n > (1u << 20)) throw FormatError("string length " + std::to_string(n) + " implausible");
  std::string s(n, '\0');
  read_exact(is, s.data(), n);
  return s;
}

NamedArray read_named_array(std::istream& is) {
  NamedArray a;
  a.name = read_string(is);
  const uint32_t rank = read_u32(is);
  if (rank > 8) throw FormatError("tensor rank " + std::to_string(rank) + " implausible");
  int64_t numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    const uint64_t d = read_u64(is);
    if (d == 0 || d > (1ull << 32)) throw FormatError("tensor dim implausible");
    a.shape.push_back(static_cast<int64_t>(d));
    numel *= static_cast<int64_t>(d);
  }
  a.values.resize(static_cast<size_t>(numel));
  read_exact(is, a.values.data(), a.values.size() * sizeof(double));
  return a;
}

}  // namespace evtrack::ad

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <omp.h>

#include <random>
#include <vector>

#include "evtrack/kernels.hpp"

using namespace evtrack;

namespace {

std::vector<double> random_vec(size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = uni(rng);
  return v;
}

}  // namespace

TEST_CASE("conv2d parallel kernels match the serial reference bit for bit") {
  omp_set_num_threads(4);
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 6; ++trial) {
    const int64_t b = 1 + trial % 3, cin = 1 + trial % 2, cout = 2 + trial % 3;
    const int64_t k = 3, pad = trial % 2;
    const int64_t stride = trial == 5 ? 2 : 1;
    const int64_t h = trial == 5 ? 7 : 6 + trial;  // 7 + 2*1 - 3 divides stride 2
    const int64_t w = trial == 5 ? 9 : 5 + trial;
    auto d = kernels::conv2d_dims(b, cin, h, w, cout, k, k, stride, pad);

    auto in = random_vec(static_cast<size_t>(b * cin * h * w), rng);
    auto wgt = random_vec(static_cast<size_t>(cout * cin * k * k), rng);
    auto bias = random_vec(static_cast<size_t>(cout), rng);
    const size_t out_n = static_cast<size_t>(b * cout * d.h_out * d.w_out);

    std::vector<double> out_par(out_n), out_ser(out_n);
    kernels::conv2d_forward(in.data(), wgt.data(), bias.data(), out_par.data(), d);
    kernels::serial::conv2d_forward(in.data(), wgt.data(), bias.data(), out_ser.data(), d);
    CHECK(out_par == out_ser);

    auto dout = random_vec(out_n, rng);
    std::vector<double> din_par(in.size(), 0.0), din_ser(in.size(), 0.0);
    kernels::conv2d_backward_input(dout.data(), wgt.data(), din_par.data(), d);
    kernels::serial::conv2d_backward_input(dout.data(), wgt.data(), din_ser.data(), d);
    CHECK(din_par == din_ser);

    std::vector<double> dw_par(wgt.size(), 0.0), dw_ser(wgt.size(), 0.0);
    kernels::conv2d_backward_weight(dout.data(), in.data(), dw_par.data(), d);
    kernels::serial::conv2d_backward_weight(dout.data(), in.data(), dw_ser.data(), d);
    CHECK(dw_par == dw_ser);

    std::vector<double> db_par(bias.size(), 0.0), db_ser(bias.size(), 0.0);
    kernels::conv2d_backward_bias(dout.data(), db_par.data(), d);
    kernels::serial::conv2d_backward_bias(dout.data(), db_ser.data(), d);
    CHECK(db_par == db_ser);
  }
}

TEST_CASE("linear parallel kernels match the serial reference bit for bit") {
  omp_set_num_threads(4);
  std::mt19937_64 rng(11);
  const int64_t b = 5, n = 17, m = 9;
  auto x = random_vec(static_cast<size_t>(b * n), rng);
  auto w = random_vec(static_cast<size_t>(m * n), rng);
  auto bias = random_vec(static_cast<size_t>(m), rng);

  std::vector<double> y_par(static_cast<size_t>(b * m)), y_ser(y_par.size());
  kernels::linear_forward(x.data(), w.data(), bias.data(), y_par.data(), b, n, m);
  kernels::serial::linear_forward(x.data(), w.data(), bias.data(), y_ser.data(), b, n, m);
  CHECK(y_par == y_ser);

  auto dy = random_vec(y_par.size(), rng);
  std::vector<double> dx_par(x.size(), 0.0), dx_ser(x.size(), 0.0);
  kernels::linear_backward_input(dy.data(), w.data(), dx_par.data(), b, n, m);
  kernels::serial::linear_backward_input(dy.data(), w.data(), dx_ser.data(), b, n, m);
  CHECK(dx_par == dx_ser);

  std::vector<double> dw_par(w.size(), 0.0), dw_ser(w.size(), 0.0);
  kernels::linear_backward_weight(dy.data(), x.data(), dw_par.data(), b, n, m);
  kernels::serial::linear_backward_weight(dy.data(), x.data(), dw_ser.data(), b, n, m);
  CHECK(dw_par == dw_ser);

  std::vector<double> db_par(bias.size(), 0.0), db_ser(bias.size(), 0.0);
  kernels::linear_backward_bias(dy.data(), db_par.data(), b, m);
  kernels::serial::linear_backward_bias(dy.data(), db_ser.data(), b, m);
  CHECK(db_par == db_ser);
}

TEST_CASE("avg pool parallel kernels match the serial reference bit for bit") {
  omp_set_num_threads(4);
  std::mt19937_64 rng(13);
  const int64_t b = 3, c = 4, h = 8, w = 6, k = 2;
  auto in = random_vec(static_cast<size_t>(b * c * h * w), rng);
  std::vector<double> out_par(static_cast<size_t>(b * c * (h / k) * (w / k)));
  std::vector<double> out_ser(out_par.size());
  kernels::avg_pool_forward(in.data(), out_par.data(), b, c, h, w, k);
  kernels::serial::avg_pool_forward(in.data(), out_ser.data(), b, c, h, w, k);
  CHECK(out_par == out_ser);

  auto dout = random_vec(out_par.size(), rng);
  std::vector<double> din_par(in.size(), 0.0), din_ser(in.size(), 0.0);
  kernels::avg_pool_backward(dout.data(), din_par.data(), b, c, h, w, k);
  kernels::serial::avg_pool_backward(dout.data(), din_ser.data(), b, c, h, w, k);
  CHECK(din_par == din_ser);
}

TEST_CASE("conv2d_dims rejects non-integral output extents") {
  CHECK_THROWS_AS(kernels::conv2d_dims(1, 1, 5, 5, 1, 2, 2, 2, 0), ShapeError);
  CHECK_NOTHROW(kernels::conv2d_dims(1, 1, 6, 6, 1, 2, 2, 2, 0));
}

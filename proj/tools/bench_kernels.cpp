// Times the OpenMP kernels against the serial reference on training-sized
// workloads and checks that both produce identical bytes.

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include "evtrack/kernels.hpp"

using namespace evtrack;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<double> random_vec(size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = uni(rng);
  return v;
}

template <typename F>
double time_best_of(int reps, F&& fn) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = Clock::now();
    fn();
    const double s = std::chrono::duration<double>(Clock::now() - t0).count();
    best = std::min(best, s);
  }
  return best;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void report(const char* name, double serial_s, double parallel_s, double diff) {
  std::printf("%-24s serial %8.3f ms   openmp %8.3f ms   speedup %5.2fx   max|diff| %g\n",
              name, serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s, diff);
}

}  // namespace

int main() {
  std::printf("threads: %d\n", omp_get_max_threads());
  std::mt19937_64 rng(1);
  const int reps = 5;

  {
    // conv block at training scale: batch 20 frames of 16ch 40x30
    auto d = kernels::conv2d_dims(20, 16, 30, 40, 32, 3, 3, 1, 1);
    auto in = random_vec(static_cast<size_t>(d.batch * d.c_in * d.h_in * d.w_in), rng);
    auto w = random_vec(static_cast<size_t>(d.c_out * d.c_in * 9), rng);
    auto bias = random_vec(static_cast<size_t>(d.c_out), rng);
    std::vector<double> out_s(static_cast<size_t>(d.batch * d.c_out * d.h_out * d.w_out));
    std::vector<double> out_p(out_s.size());
    const double ts = time_best_of(reps, [&] {
      kernels::serial::conv2d_forward(in.data(), w.data(), bias.data(), out_s.data(), d);
    });
    const double tp = time_best_of(reps, [&] {
      kernels::conv2d_forward(in.data(), w.data(), bias.data(), out_p.data(), d);
    });
    report("conv2d forward", ts, tp, max_abs_diff(out_s, out_p));

    auto dout = random_vec(out_s.size(), rng);
    std::vector<double> din_s(in.size()), din_p(in.size());
    const double bs = time_best_of(reps, [&] {
      std::fill(din_s.begin(), din_s.end(), 0.0);
      kernels::serial::conv2d_backward_input(dout.data(), w.data(), din_s.data(), d);
    });
    const double bp = time_best_of(reps, [&] {
      std::fill(din_p.begin(), din_p.end(), 0.0);
      kernels::conv2d_backward_input(dout.data(), w.data(), din_p.data(), d);
    });
    report("conv2d backward input", bs, bp, max_abs_diff(din_s, din_p));

    std::vector<double> dw_s(w.size()), dw_p(w.size());
    const double ws = time_best_of(reps, [&] {
      std::fill(dw_s.begin(), dw_s.end(), 0.0);
      kernels::serial::conv2d_backward_weight(dout.data(), in.data(), dw_s.data(), d);
    });
    const double wp = time_best_of(reps, [&] {
      std::fill(dw_p.begin(), dw_p.end(), 0.0);
      kernels::conv2d_backward_weight(dout.data(), in.data(), dw_p.data(), d);
    });
    report("conv2d backward weight", ws, wp, max_abs_diff(dw_s, dw_p));
  }

  {
    // feature linear at training scale: 600 rows of 4480 -> 128
    const int64_t b = 600, n = 4480, m = 128;
    auto x = random_vec(static_cast<size_t>(b * n), rng);
    auto w = random_vec(static_cast<size_t>(m * n), rng);
    auto bias = random_vec(static_cast<size_t>(m), rng);
    std::vector<double> y_s(static_cast<size_t>(b * m)), y_p(y_s.size());
    const double ts = time_best_of(reps, [&] {
      kernels::serial::linear_forward(x.data(), w.data(), bias.data(), y_s.data(), b, n, m);
    });
    const double tp = time_best_of(reps, [&] {
      kernels::linear_forward(x.data(), w.data(), bias.data(), y_p.data(), b, n, m);
    });
    report("linear forward", ts, tp, max_abs_diff(y_s, y_p));

    auto dy = random_vec(y_s.size(), rng);
    std::vector<double> dw_s(w.size()), dw_p(w.size());
    const double ws = time_best_of(reps, [&] {
      std::fill(dw_s.begin(), dw_s.end(), 0.0);
      kernels::serial::linear_backward_weight(dy.data(), x.data(), dw_s.data(), b, n, m);
    });
    const double wp = time_best_of(reps, [&] {
      std::fill(dw_p.begin(), dw_p.end(), 0.0);
      kernels::linear_backward_weight(dy.data(), x.data(), dw_p.data(), b, n, m);
    });
    report("linear backward weight", ws, wp, max_abs_diff(dw_s, dw_p));
  }

  {
    const int64_t b = 600, c = 16, h = 60, w = 80, k = 2;
    auto in = random_vec(static_cast<size_t>(b * c * h * w), rng);
    std::vector<double> out_s(static_cast<size_t>(b * c * (h / k) * (w / k)));
    std::vector<double> out_p(out_s.size());
    const double ts = time_best_of(reps, [&] {
      kernels::serial::avg_pool_forward(in.data(), out_s.data(), b, c, h, w, k);
    });
    const double tp = time_best_of(reps, [&] {
      kernels::avg_pool_forward(in.data(), out_p.data(), b, c, h, w, k);
    });
    report("avg_pool forward", ts, tp, max_abs_diff(out_s, out_p));
  }

  return 0;
}

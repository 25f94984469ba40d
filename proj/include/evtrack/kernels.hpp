#pragma once

#include <cstdint>

#include "evtrack/errors.hpp"

// Dense math kernels behind the autodiff ops. The default entry points are
// OpenMP-parallel; kernels::serial holds the plain-loop reference used by the
// equivalence tests and the benchmark. Both variants compute every output
// element as an independent fixed-order sum, so results are bit-identical
// across thread counts.
//
// Forward kernels overwrite their output buffer; backward kernels accumulate
// (+=) into theirs, matching how adjoints are folded together.
namespace evtrack::kernels {

struct Conv2dDims {
  int64_t batch, c_in, h_in, w_in;
  int64_t c_out, kh, kw;
  int64_t stride, pad;
  int64_t h_out, w_out;
};

// Validates the geometry and fills h_out/w_out. Throws ShapeError when the
// output extent is not integral or not positive.
Conv2dDims conv2d_dims(int64_t batch, int64_t c_in, int64_t h_in, int64_t w_in,
                       int64_t c_out, int64_t kh, int64_t kw, int64_t stride,
                       int64_t pad);

void conv2d_forward(const double* in, const double* w, const double* bias,
                    double* out, const Conv2dDims& d);
void conv2d_backward_input(const double* dout, const double* w, double* din,
                           const Conv2dDims& d);
void conv2d_backward_weight(const double* dout, const double* in, double* dw,
                            const Conv2dDims& d);
void conv2d_backward_bias(const double* dout, double* db, const Conv2dDims& d);

// y[b,m] = bias[m] + sum_n x[b,n] * w[m,n]; bias may be null.
void linear_forward(const double* x, const double* w, const double* bias,
                    double* y, int64_t b, int64_t n, int64_t m);
void linear_backward_input(const double* dy, const double* w, double* dx,
                           int64_t b, int64_t n, int64_t m);
void linear_backward_weight(const double* dy, const double* x, double* dw,
                            int64_t b, int64_t n, int64_t m);
void linear_backward_bias(const double* dy, double* db, int64_t b, int64_t m);

// k x k mean pooling with stride k; h and w must be divisible by k.
void avg_pool_forward(const double* in, double* out, int64_t batch, int64_t c,
                      int64_t h, int64_t w, int64_t k);
void avg_pool_backward(const double* dout, double* din, int64_t batch, int64_t c,
                       int64_t h, int64_t w, int64_t k);

namespace serial {

void conv2d_forward(const double* in, const double* w, const double* bias,
                    double* out, const Conv2dDims& d);
void conv2d_backward_input(const double* dout, const double* w, double* din,
                           const Conv2dDims& d);
void conv2d_backward_weight(const double* dout, const double* in, double* dw,
                            const Conv2dDims& d);
void conv2d_backward_bias(const double* dout, double* db, const Conv2dDims& d);
void linear_forward(const double* x, const double* w, const double* bias,
                    double* y, int64_t b, int64_t n, int64_t m);
void linear_backward_input(const double* dy, const double* w, double* dx,
                           int64_t b, int64_t n, int64_t m);
void linear_backward_weight(const double* dy, const double* x, double* dw,
                            int64_t b, int64_t n, int64_t m);
void linear_backward_bias(const double* dy, double* db, int64_t b, int64_t m);
void avg_pool_forward(const double* in, double* out, int64_t batch, int64_t c,
                      int64_t h, int64_t w, int64_t k);
void avg_pool_backward(const double* dout, double* din, int64_t batch, int64_t c,
                       int64_t h, int64_t w, int64_t k);

}  // namespace serial

}  // namespace evtrack::kernels

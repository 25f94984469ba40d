#include "evtrack/kernels.hpp"

#include <string>

namespace evtrack::kernels {

Conv2dDims conv2d_dims(int64_t batch, int64_t c_in, int64_t h_in, int64_t w_in,
                       int64_t c_out, int64_t kh, int64_t kw, int64_t stride,
                       int64_t pad) {
  if (stride <= 0 || pad < 0) throw ShapeError("conv2d: stride must be > 0 and pad >= 0");
  const int64_t hn = h_in + 2 * pad - kh;
  const int64_t wn = w_in + 2 * pad - kw;
  if (hn < 0 || wn < 0 || hn % stride != 0 || wn % stride != 0) {
    throw ShapeError("conv2d: input " + std::to_string(h_in) + "x" + std::to_string(w_in) +
                     " with kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " stride " + std::to_string(stride) + " pad " + std::to_string(pad) +
                     " has non-integral output extent");
  }
  Conv2dDims d{batch, c_in, h_in, w_in, c_out, kh, kw, stride, pad,
               hn / stride + 1, wn / stride + 1};
  return d;
}

// ---------------------------------------------------------------------------
// OpenMP kernels. Parallel loops run over independent output elements; the
// inner reduction order is fixed, so results do not depend on thread count.
// ---------------------------------------------------------------------------

void conv2d_forward(const double* in, const double* w, const double* bias,
                    double* out, const Conv2dDims& d) {
  const int64_t in_hw = d.h_in * d.w_in;
  const int64_t out_hw = d.h_out * d.w_out;
  const int64_t k_hw = d.kh * d.kw;
#pragma omp parallel for
  for (int64_t bc = 0; bc < d.batch * d.c_out; ++bc) {
    const int64_t b = bc / d.c_out;
    const int64_t co = bc % d.c_out;
    const double* in_b = in + b * d.c_in * in_hw;
    const double* w_co = w + co * d.c_in * k_hw;
    double* out_bc = out + bc * out_hw;
    for (int64_t oy = 0; oy < d.h_out; ++oy) {
      for (int64_t ox = 0; ox < d.w_out; ++ox) {
        double acc = bias ? bias[co] : 0.0;
        for (int64_t ci = 0; ci < d.c_in; ++ci) {
          const double* in_c = in_b + ci * in_hw;
          const double* w_c = w_co + ci * k_hw;
          for (int64_t ky = 0; ky < d.kh; ++ky) {
            const int64_t iy = oy * d.stride - d.pad + ky;
            if (iy < 0 || iy >= d.h_in) continue;
            for (int64_t kx = 0; kx < d.kw; ++kx) {
              const int64_t ix = ox * d.stride - d.pad + kx;
              if (ix < 0 || ix >= d.w_in) continue;
              acc += in_c[iy * d.w_in + ix] * w_c[ky * d.kw + kx];
            }
          }
        }
        out_bc[oy * d.w_out + ox] = acc;
      }
    }
  }
}

void conv2d_backward_input(const double* dout, const double* w, double* din,
                           const Conv2dDims& d) {
  const int64_t in_hw = d.h_in * d.w_in;
  const int64_t out_hw = d.h_out * d.w_out;
  const int64_t k_hw = d.kh * d.kw;
#pragma omp parallel for
  for (int64_t bc = 0; bc < d.batch * d.c_in; ++bc) {
    const int64_t b = bc / d.c_in;
    const int64_t ci = bc % d.c_in;
    const double* dout_b = dout + b * d.c_out * out_hw;
    double* din_bc = din + bc * in_hw;
    for (int64_t iy = 0; iy < d.h_in; ++iy) {
      for (int64_t ix = 0; ix < d.w_in; ++ix) {
        double acc = 0.0;
        for (int64_t co = 0; co < d.c_out; ++co) {
          const double* dout_c = dout_b + co * out_hw;
          const double* w_c = w + (co * d.c_in + ci) * k_hw;
          for (int64_t ky = 0; ky < d.kh; ++ky) {
            const int64_t num_y = iy + d.pad - ky;
            if (num_y < 0 || num_y % d.stride != 0) continue;
            const int64_t oy = num_y / d.stride;
            if (oy >= d.h_out) continue;
            for (int64_t kx = 0; kx < d.kw; ++kx) {
              const int64_t num_x = ix + d.pad - kx;
              if (num_x < 0 || num_x % d.stride != 0) continue;
              const int64_t ox = num_x / d.stride;
              if (ox >= d.w_out) continue;
              acc += dout_c[oy * d.w_out + ox] * w_c[ky * d.kw + kx];
            }
          }
        }
        din_bc[iy * d.w_in + ix] += acc;
      }
    }
  }
}

void conv2d_backward_weight(const double* dout, const double* in, double* dw,
                            const Conv2dDims& d) {
  const int64_t in_hw = d.h_in * d.w_in;
  const int64_t out_hw = d.h_out * d.w_out;
  const int64_t k_hw = d.kh * d.kw;
#pragma omp parallel for
  for (int64_t cc = 0; cc < d.c_out * d.c_in; ++cc) {
    const int64_t co = cc / d.c_in;
    const int64_t ci = cc % d.c_in;
    double* dw_cc = dw + cc * k_hw;
    for (int64_t ky = 0; ky < d.kh; ++ky) {
      for (int64_t kx = 0; kx < d.kw; ++kx) {
        double acc = 0.0;
        for (int64_t b = 0; b < d.batch; ++b) {
          const double* dout_c = dout + (b * d.c_out + co) * out_hw;
          const double* in_c = in + (b * d.c_in + ci) * in_hw;
          for (int64_t oy = 0; oy < d.h_out; ++oy) {
            const int64_t iy = oy * d.stride - d.pad + ky;
            if (iy < 0 || iy >= d.h_in) continue;
            for (int64_t ox = 0; ox < d.w_out; ++ox) {
              const int64_t ix = ox * d.stride - d.pad + kx;
              if (ix < 0 || ix >= d.w_in) continue;
              acc += dout_c[oy * d.w_out + ox] * in_c[iy * d.w_in + ix];
            }
          }
        }
        dw_cc[ky * d.kw + kx] += acc;
      }
    }
  }
}

void conv2d_backward_bias(const double* dout, double* db, const Conv2dDims& d) {
  const int64_t out_hw = d.h_out * d.w_out;
#pragma omp parallel for
  for (int64_t co = 0; co < d.c_out; ++co) {
    double acc = 0.0;
    for (int64_t b = 0; b < d.batch; ++b) {
      const double* dout_c = dout + (b * d.c_out + co) * out_hw;
      for (int64_t i = 0; i < out_hw; ++i) acc += dout_c[i];
    }
    db[co] += acc;
  }
}

void linear_forward(const double* x, const double* w, const double* bias,
                    double* y, int64_t b, int64_t n, int64_t m) {
#pragma omp parallel for
  for (int64_t bm = 0; bm < b * m; ++bm) {
    const int64_t bi = bm / m;
    const int64_t mi = bm % m;
    const double* xb = x + bi * n;
    const double* wm = w + mi * n;
    double acc = bias ? bias[mi] : 0.0;
    for (int64_t ni = 0; ni < n; ++ni) acc += xb[ni] * wm[ni];
    y[bm] = acc;
  }
}

void linear_backward_input(const double* dy, const double* w, double* dx,
                           int64_t b, int64_t n, int64_t m) {
#pragma omp parallel for
  for (int64_t bi = 0; bi < b; ++bi) {
    const double* dyb = dy + bi * m;
    double* dxb = dx + bi * n;
    for (int64_t mi = 0; mi < m; ++mi) {
      const double g = dyb[mi];
      if (g == 0.0) continue;
      const double* wm = w + mi * n;
      for (int64_t ni = 0; ni < n; ++ni) dxb[ni] += g * wm[ni];
    }
  }
}

void linear_backward_weight(const double* dy, const double* x, double* dw,
                            int64_t b, int64_t n, int64_t m) {
#pragma omp parallel for
  for (int64_t mi = 0; mi < m; ++mi) {
    double* dwm = dw + mi * n;
    for (int64_t bi = 0; bi < b; ++bi) {
      const double g = dy[bi * m + mi];
      if (g == 0.0) continue;
      const double* xb = x + bi * n;
      for (int64_t ni = 0; ni < n; ++ni) dwm[ni] += g * xb[ni];
    }
  }
}

void linear_backward_bias(const double* dy, double* db, int64_t b, int64_t m) {
#pragma omp parallel for
  for (int64_t mi = 0; mi < m; ++mi) {
    double acc = 0.0;
    for (int64_t bi = 0; bi < b; ++bi) acc += dy[bi * m + mi];
    db[mi] += acc;
  }
}

void avg_pool_forward(const double* in, double* out, int64_t batch, int64_t c,
                      int64_t h, int64_t w, int64_t k) {
  const int64_t oh = h / k, ow = w / k;
  const double inv = 1.0 / static_cast<double>(k * k);
#pragma omp parallel for
  for (int64_t bc = 0; bc < batch * c; ++bc) {
    const double* in_bc = in + bc * h * w;
    double* out_bc = out + bc * oh * ow;
    for (int64_t oy = 0; oy < oh; ++oy) {
      for (int64_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int64_t ky = 0; ky < k; ++ky)
          for (int64_t kx = 0; kx < k; ++kx)
            acc += in_bc[(oy * k + ky) * w + ox * k + kx];
        out_bc[oy * ow + ox] = acc * inv;
      }
    }
  }
}

void avg_pool_backward(const double* dout, double* din, int64_t batch, int64_t c,
                       int64_t h, int64_t w, int64_t k) {
  const int64_t oh = h / k, ow = w / k;
  const double inv = 1.0 / static_cast<double>(k * k);
#pragma omp parallel for
  for (int64_t bc = 0; bc < batch * c; ++bc) {
    const double* dout_bc = dout + bc * oh * ow;
    double* din_bc = din + bc * h * w;
    for (int64_t iy = 0; iy < h; ++iy) {
      for (int64_t ix = 0; ix < w; ++ix) {
        din_bc[iy * w + ix] += dout_bc[(iy / k) * ow + ix / k] * inv;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Serial reference. Same arithmetic, no pragmas.
// ---------------------------------------------------------------------------

namespace serial {

void conv2d_forward(const double* in, const double* w, const double* bias,
                    double* out, const Conv2dDims& d) {
  const int64_t in_hw = d.h_in * d.w_in;
  const int64_t out_hw = d.h_out * d.w_out;
  const int64_t k_hw = d.kh * d.kw;
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t co = 0; co < d.c_out; ++co) {
      double* out_bc = out + (b * d.c_out + co) * out_hw;
      for (int64_t oy = 0; oy < d.h_out; ++oy) {
        for (int64_t ox = 0; ox < d.w_out; ++ox) {
          double acc = bias ? bias[co] : 0.0;
          for (int64_t ci = 0; ci < d.c_in; ++ci) {
            const double* in_c = in + (b * d.c_in + ci) * in_hw;
            const double* w_c = w + (co * d.c_in + ci) * k_hw;
            for (int64_t ky = 0; ky < d.kh; ++ky) {
              const int64_t iy = oy * d.stride - d.pad + ky;
              if (iy < 0 || iy >= d.h_in) continue;
              for (int64_t kx = 0; kx < d.kw; ++kx) {
                const int64_t ix = ox * d.stride - d.pad + kx;
                if (ix < 0 || ix >= d.w_in) continue;
                acc += in_c[iy * d.w_in + ix] * w_c[ky * d.kw + kx];
              }
            }
          }
          out_bc[oy * d.w_out + ox] = acc;
        }
      }
    }
  }
}

void conv2d_backward_input(const double* dout, const double* w, double* din,
                           const Conv2dDims& d) {
  const int64_t in_hw = d.h_in * d.w_in;
  const int64_t out_hw = d.h_out * d.w_out;
  const int64_t k_hw = d.kh * d.kw;
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t ci = 0; ci < d.c_in; ++ci) {
      double* din_bc = din + (b * d.c_in + ci) * in_hw;
      for (int64_t iy = 0; iy < d.h_in; ++iy) {
        for (int64_t ix = 0; ix < d.w_in; ++ix) {
          double acc = 0.0;
          for (int64_t co = 0; co < d.c_out; ++co) {
            const double* dout_c = dout + (b * d.c_out + co) * out_hw;
            const double* w_c = w + (co * d.c_in + ci) * k_hw;
            for (int64_t ky = 0; ky < d.kh; ++ky) {
              const int64_t num_y = iy + d.pad - ky;
              if (num_y < 0 || num_y % d.stride != 0) continue;
              const int64_t oy = num_y / d.stride;
              if (oy >= d.h_out) continue;
              for (int64_t kx = 0; kx < d.kw; ++kx) {
                const int64_t num_x = ix + d.pad - kx;
                if (num_x < 0 || num_x % d.stride != 0) continue;
                const int64_t ox = num_x / d.stride;
                if (ox >= d.w_out) continue;
                acc += dout_c[oy * d.w_out + ox] * w_c[ky * d.kw + kx];
              }
            }
          }
          din_bc[iy * d.w_in + ix] += acc;
        }
      }
    }
  }
}

void conv2d_backward_weight(const double* dout, const double* in, double* dw,
                            const Conv2dDims& d) {
  const int64_t in_hw = d.h_in * d.w_in;
  const int64_t out_hw = d.h_out * d.w_out;
  const int64_t k_hw = d.kh * d.kw;
  for (int64_t co = 0; co < d.c_out; ++co) {
    for (int64_t ci = 0; ci < d.c_in; ++ci) {
      double* dw_cc = dw + (co * d.c_in + ci) * k_hw;
      for (int64_t ky = 0; ky < d.kh; ++ky) {
        for (int64_t kx = 0; kx < d.kw; ++kx) {
          double acc = 0.0;
          for (int64_t b = 0; b < d.batch; ++b) {
            const double* dout_c = dout + (b * d.c_out + co) * out_hw;
            const double* in_c = in + (b * d.c_in + ci) * in_hw;
            for (int64_t oy = 0; oy < d.h_out; ++oy) {
              const int64_t iy = oy * d.stride - d.pad + ky;
              if (iy < 0 || iy >= d.h_in) continue;
              for (int64_t ox = 0; ox < d.w_out; ++ox) {
                const int64_t ix = ox * d.stride - d.pad + kx;
                if (ix < 0 || ix >= d.w_in) continue;
                acc += dout_c[oy * d.w_out + ox] * in_c[iy * d.w_in + ix];
              }
            }
          }
          dw_cc[ky * d.kw + kx] += acc;
        }
      }
    }
  }
}

void conv2d_backward_bias(const double* dout, double* db, const Conv2dDims& d) {
  const int64_t out_hw = d.h_out * d.w_out;
  for (int64_t co = 0; co < d.c_out; ++co) {
    double acc = 0.0;
    for (int64_t b = 0; b < d.batch; ++b) {
      const double* dout_c = dout + (b * d.c_out + co) * out_hw;
      for (int64_t i = 0; i < out_hw; ++i) acc += dout_c[i];
    }
    db[co] += acc;
  }
}

void linear_forward(const double* x, const double* w, const double* bias,
                    double* y, int64_t b, int64_t n, int64_t m) {
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t mi = 0; mi < m; ++mi) {
      const double* xb = x + bi * n;
      const double* wm = w + mi * n;
      double acc = bias ? bias[mi] : 0.0;
      for (int64_t ni = 0; ni < n; ++ni) acc += xb[ni] * wm[ni];
      y[bi * m + mi] = acc;
    }
  }
}

void linear_backward_input(const double* dy, const double* w, double* dx,
                           int64_t b, int64_t n, int64_t m) {
  for (int64_t bi = 0; bi < b; ++bi) {
    const double* dyb = dy + bi * m;
    double* dxb = dx + bi * n;
    for (int64_t mi = 0; mi < m; ++mi) {
      const double g = dyb[mi];
      if (g == 0.0) continue;
      const double* wm = w + mi * n;
      for (int64_t ni = 0; ni < n; ++ni) dxb[ni] += g * wm[ni];
    }
  }
}

void linear_backward_weight(const double* dy, const double* x, double* dw,
                            int64_t b, int64_t n, int64_t m) {
  for (int64_t mi = 0; mi < m; ++mi) {
    double* dwm = dw + mi * n;
    for (int64_t bi = 0; bi < b; ++bi) {
      const double g = dy[bi * m + mi];
      if (g == 0.0) continue;
      const double* xb = x + bi * n;
      for (int64_t ni = 0; ni < n; ++ni) dwm[ni] += g * xb[ni];
    }
  }
}

void linear_backward_bias(const double* dy, double* db, int64_t b, int64_t m) {
  for (int64_t mi = 0; mi < m; ++mi) {
    double acc = 0.0;
    for (int64_t bi = 0; bi < b; ++bi) acc += dy[bi * m + mi];
    db[mi] += acc;
  }
}

void avg_pool_forward(const double* in, double* out, int64_t batch, int64_t c,
                      int64_t h, int64_t w, int64_t k) {
  const int64_t oh = h / k, ow = w / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  for (int64_t bc = 0; bc < batch * c; ++bc) {
    const double* in_bc = in + bc * h * w;
    double* out_bc = out + bc * oh * ow;
    for (int64_t oy = 0; oy < oh; ++oy) {
      for (int64_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int64_t ky = 0; ky < k; ++ky)
          for (int64_t kx = 0; kx < k; ++kx)
            acc += in_bc[(oy * k + ky) * w + ox * k + kx];
        out_bc[oy * ow + ox] = acc * inv;
      }
    }
  }
}

void avg_pool_backward(const double* dout, double* din, int64_t batch, int64_t c,
                       int64_t h, int64_t w, int64_t k) {
  const int64_t oh = h / k, ow = w / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  for (int64_t bc = 0; bc < batch * c; ++bc) {
    const double* dout_bc = dout + bc * oh * ow;
    double* din_bc = din + bc * h * w;
    for (int64_t iy = 0; iy < h; ++iy) {
      for (int64_t ix = 0; ix < w; ++ix) {
        din_bc[iy * w + ix] += dout_bc[(iy / k) * ow + ix / k] * inv;
      }
    }
  }
}

}  // namespace serial

}  // namespace evtrack::kernels

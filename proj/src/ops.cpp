#include "evtrack/ops.hpp"

#include <cmath>

#include "evtrack/kernels.hpp"

namespace evtrack::ad {

namespace {

// Adds src into dst (same length).
void axpy1(std::vector<double>& dst, const std::vector<double>& src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

TensorPtr conv2d(Tape& tape, const TensorPtr& x, const TensorPtr& w,
                 const TensorPtr& bias, int64_t stride, int64_t pad) {
  if (x->rank() != 4 || w->rank() != 4) {
    throw ShapeError("conv2d: expected 4-d input and weight, got " +
                     shape_str(x->shape) + " and " + shape_str(w->shape));
  }
  if (x->dim(1) != w->dim(1)) {
    throw ShapeError("conv2d: channel mismatch, input " + shape_str(x->shape) +
                     " vs weight " + shape_str(w->shape));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != w->dim(0))) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias->shape) +
                     " does not match out channels " + std::to_string(w->dim(0)));
  }
  auto d = kernels::conv2d_dims(x->dim(0), x->dim(1), x->dim(2), x->dim(3),
                                w->dim(0), w->dim(2), w->dim(3), stride, pad);
  auto out = make_tensor({d.batch, d.c_out, d.h_out, d.w_out});
  kernels::conv2d_forward(x->values.data(), w->values.data(),
                          bias ? bias->values.data() : nullptr,
                          out->values.data(), d);
  tape.record([x, w, bias, out, d](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    kernels::conv2d_backward_input(dout->data(), w->values.data(),
                                   adj.of(x).data(), d);
    kernels::conv2d_backward_weight(dout->data(), x->values.data(),
                                    adj.of(w).data(), d);
    if (bias) kernels::conv2d_backward_bias(dout->data(), adj.of(bias).data(), d);
  });
  return out;
}

TensorPtr avg_pool2d(Tape& tape, const TensorPtr& x, int64_t k) {
  if (x->rank() != 4) throw ShapeError("avg_pool2d: expected 4-d input, got " + shape_str(x->shape));
  if (k <= 0) throw ShapeError("avg_pool2d: window must be positive");
  const int64_t h = x->dim(2), w = x->dim(3);
  if (h % k != 0 || w % k != 0) {
    throw ShapeError("avg_pool2d: dims " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by window " + std::to_string(k));
  }
  const int64_t b = x->dim(0), c = x->dim(1);
  auto out = make_tensor({b, c, h / k, w / k});
  kernels::avg_pool_forward(x->values.data(), out->values.data(), b, c, h, w, k);
  tape.record([x, out, b, c, h, w, k](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    kernels::avg_pool_backward(dout->data(), adj.of(x).data(), b, c, h, w, k);
  });
  return out;
}

TensorPtr crop2d(Tape& tape, const TensorPtr& x, int64_t new_h, int64_t new_w) {
  if (x->rank() != 4) throw ShapeError("crop2d: expected 4-d input, got " + shape_str(x->shape));
  const int64_t b = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
  if (new_h > h || new_w > w || new_h < 1 || new_w < 1) {
    throw ShapeError("crop2d: target " + std::to_string(new_h) + "x" + std::to_string(new_w) +
                     " outside input " + std::to_string(h) + "x" + std::to_string(w));
  }
  if (new_h == h && new_w == w) return x;
  auto out = make_tensor({b, c, new_h, new_w});
  for (int64_t bc = 0; bc < b * c; ++bc) {
    const double* src = x->values.data() + bc * h * w;
    double* dst = out->values.data() + bc * new_h * new_w;
    for (int64_t y = 0; y < new_h; ++y)
      for (int64_t xx = 0; xx < new_w; ++xx) dst[y * new_w + xx] = src[y * w + xx];
  }
  tape.record([x, out, b, c, h, w, new_h, new_w](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    auto& din = adj.of(x);
    for (int64_t bc = 0; bc < b * c; ++bc) {
      const double* src = dout->data() + bc * new_h * new_w;
      double* dst = din.data() + bc * h * w;
      for (int64_t y = 0; y < new_h; ++y)
        for (int64_t xx = 0; xx < new_w; ++xx) dst[y * w + xx] += src[y * new_w + xx];
    }
  });
  return out;
}

TensorPtr linear(Tape& tape, const TensorPtr& x, const TensorPtr& w,
                 const TensorPtr& bias) {
  if (x->rank() != 2 || w->rank() != 2 || x->dim(1) != w->dim(1)) {
    throw ShapeError("linear: input " + shape_str(x->shape) + " vs weight " +
                     shape_str(w->shape));
  }
  const int64_t b = x->dim(0), n = x->dim(1), m = w->dim(0);
  if (bias && (bias->rank() != 1 || bias->dim(0) != m)) {
    throw ShapeError("linear: bias shape " + shape_str(bias->shape) +
                     " does not match output dim " + std::to_string(m));
  }
  auto out = make_tensor({b, m});
  kernels::linear_forward(x->values.data(), w->values.data(),
                          bias ? bias->values.data() : nullptr,
                          out->values.data(), b, n, m);
  tape.record([x, w, bias, out, b, n, m](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    kernels::linear_backward_input(dout->data(), w->values.data(), adj.of(x).data(), b, n, m);
    kernels::linear_backward_weight(dout->data(), x->values.data(), adj.of(w).data(), b, n, m);
    if (bias) kernels::linear_backward_bias(dout->data(), adj.of(bias).data(), b, m);
  });
  return out;
}

TensorPtr activation(Tape& tape, const TensorPtr& x, Activation kind) {
  auto out = make_tensor(x->shape);
  const auto& xv = x->values;
  auto& ov = out->values;
  switch (kind) {
    case Activation::relu:
      for (size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
      break;
    case Activation::sigmoid:
      for (size_t i = 0; i < xv.size(); ++i) ov[i] = 1.0 / (1.0 + std::exp(-xv[i]));
      break;
    case Activation::tanh:
      for (size_t i = 0; i < xv.size(); ++i) ov[i] = std::tanh(xv[i]);
      break;
  }
  tape.record([x, out, kind](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    auto& din = adj.of(x);
    const auto& xv = x->values;
    const auto& ov = out->values;
    switch (kind) {
      case Activation::relu:
        for (size_t i = 0; i < xv.size(); ++i)
          if (xv[i] > 0.0) din[i] += (*dout)[i];
        break;
      case Activation::sigmoid:
        for (size_t i = 0; i < xv.size(); ++i) din[i] += (*dout)[i] * ov[i] * (1.0 - ov[i]);
        break;
      case Activation::tanh:
        for (size_t i = 0; i < xv.size(); ++i) din[i] += (*dout)[i] * (1.0 - ov[i] * ov[i]);
        break;
    }
  });
  return out;
}

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(*a, *b, "add");
  auto out = make_tensor(a->shape);
  for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] + b->values[i];
  tape.record([a, b, out](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    axpy1(adj.of(a), *dout);
    axpy1(adj.of(b), *dout);
  });
  return out;
}

TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(*a, *b, "sub");
  auto out = make_tensor(a->shape);
  for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] - b->values[i];
  tape.record([a, b, out](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    axpy1(adj.of(a), *dout);
    auto& db = adj.of(b);
    for (size_t i = 0; i < db.size(); ++i) db[i] -= (*dout)[i];
  });
  return out;
}

TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(*a, *b, "mul");
  auto out = make_tensor(a->shape);
  for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] * b->values[i];
  tape.record([a, b, out](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    auto& da = adj.of(a);
    for (size_t i = 0; i < da.size(); ++i) da[i] += (*dout)[i] * b->values[i];
    auto& db = adj.of(b);
    for (size_t i = 0; i < db.size(); ++i) db[i] += (*dout)[i] * a->values[i];
  });
  return out;
}

TensorPtr affine(Tape& tape, const TensorPtr& x, double scale, double shift) {
  auto out = make_tensor(x->shape);
  for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = scale * x->values[i] + shift;
  tape.record([x, out, scale](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    auto& din = adj.of(x);
    for (size_t i = 0; i < din.size(); ++i) din[i] += scale * (*dout)[i];
  });
  return out;
}

TensorPtr reshape(Tape& tape, const TensorPtr& x, std::vector<int64_t> shape) {
  if (Tensor::numel(shape) != x->size()) {
    throw ShapeError("reshape: " + shape_str(x->shape) + " to " + shape_str(shape) +
                     " changes element count");
  }
  auto out = make_tensor(std::move(shape));
  out->values = x->values;
  tape.record([x, out](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    axpy1(adj.of(x), *dout);
  });
  return out;
}

TensorPtr slice_cols(Tape& tape, const TensorPtr& x, int64_t c0, int64_t c1) {
  if (x->rank() != 2 || c0 < 0 || c1 > x->dim(1) || c0 >= c1) {
    throw ShapeError("slice_cols: [" + std::to_string(c0) + ", " + std::to_string(c1) +
                     ") invalid for " + shape_str(x->shape));
  }
  const int64_t b = x->dim(0), n = x->dim(1), m = c1 - c0;
  auto out = make_tensor({b, m});
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t j = 0; j < m; ++j) out->values[bi * m + j] = x->values[bi * n + c0 + j];
  tape.record([x, out, b, n, m, c0](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    auto& din = adj.of(x);
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t j = 0; j < m; ++j) din[bi * n + c0 + j] += (*dout)[bi * m + j];
  });
  return out;
}

TensorPtr concat_cols(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 2 || b->rank() != 2 || a->dim(0) != b->dim(0)) {
    throw ShapeError("concat_cols: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  }
  const int64_t rows = a->dim(0), na = a->dim(1), nb = b->dim(1);
  auto out = make_tensor({rows, na + nb});
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < na; ++j) out->values[r * (na + nb) + j] = a->values[r * na + j];
    for (int64_t j = 0; j < nb; ++j) out->values[r * (na + nb) + na + j] = b->values[r * nb + j];
  }
  tape.record([a, b, out, rows, na, nb](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    auto& da = adj.of(a);
    auto& db = adj.of(b);
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t j = 0; j < na; ++j) da[r * na + j] += (*dout)[r * (na + nb) + j];
      for (int64_t j = 0; j < nb; ++j) db[r * nb + j] += (*dout)[r * (na + nb) + na + j];
    }
  });
  return out;
}

TensorPtr stack_rows(Tape& tape, const std::vector<TensorPtr>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  for (const auto& r : rows) require_same_shape(*rows[0], *r, "stack_rows");
  std::vector<int64_t> shape{static_cast<int64_t>(rows.size())};
  shape.insert(shape.end(), rows[0]->shape.begin(), rows[0]->shape.end());
  auto out = make_tensor(std::move(shape));
  const int64_t step = rows[0]->size();
  for (size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i]->values.begin(), rows[i]->values.end(),
              out->values.begin() + static_cast<int64_t>(i) * step);
  }
  tape.record([rows, out, step](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    for (size_t i = 0; i < rows.size(); ++i) {
      auto& din = adj.of(rows[i]);
      const double* src = dout->data() + static_cast<int64_t>(i) * step;
      for (int64_t j = 0; j < step; ++j) din[j] += src[j];
    }
  });
  return out;
}

TensorPtr select_row(Tape& tape, const TensorPtr& x, int64_t i) {
  if (x->rank() < 2 || i < 0 || i >= x->dim(0)) {
    throw ShapeError("select_row: index " + std::to_string(i) + " out of " + shape_str(x->shape));
  }
  std::vector<int64_t> shape(x->shape.begin() + 1, x->shape.end());
  auto out = make_tensor(std::move(shape));
  const int64_t step = out->size();
  std::copy(x->values.begin() + i * step, x->values.begin() + (i + 1) * step,
            out->values.begin());
  tape.record([x, out, i, step](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    auto& din = adj.of(x);
    for (int64_t j = 0; j < step; ++j) din[i * step + j] += (*dout)[j];
  });
  return out;
}

TensorPtr sum(Tape& tape, const TensorPtr& x) {
  auto out = make_tensor({1});
  double acc = 0.0;
  for (double v : x->values) acc += v;
  out->values[0] = acc;
  tape.record([x, out](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    auto& din = adj.of(x);
    for (auto& g : din) g += (*dout)[0];
  });
  return out;
}

TensorPtr batch_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, BatchNormState& state, Mode mode,
                     double momentum, double eps) {
  if (x->rank() != 2 && x->rank() != 4) {
    throw ShapeError("batch_norm: expected [N,C] or [N,C,H,W], got " + shape_str(x->shape));
  }
  const int64_t n = x->dim(0), c = x->dim(1);
  const int64_t spatial = x->size() / (n * c);
  if (gamma->size() != c || beta->size() != c ||
      static_cast<int64_t>(state.running_mean.size()) != c) {
    throw ShapeError("batch_norm: affine/state size does not match " + std::to_string(c) +
                     " channels");
  }
  if (mode == Mode::train && n < 2) {
    throw ContractError("batch_norm: train mode needs batch >= 2, got " + std::to_string(n));
  }

  const int64_t m = n * spatial;  // elements per channel
  auto out = make_tensor(x->shape);
  auto idx = [&](int64_t ni, int64_t ci, int64_t si) {
    return (ni * c + ci) * spatial + si;
  };

  std::vector<double> mean(c), var(c);
  if (mode == Mode::train) {
    for (int64_t ci = 0; ci < c; ++ci) {
      double s = 0.0;
      for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t si = 0; si < spatial; ++si) s += x->values[idx(ni, ci, si)];
      mean[ci] = s / static_cast<double>(m);
      double v = 0.0;
      for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t si = 0; si < spatial; ++si) {
          const double d = x->values[idx(ni, ci, si)] - mean[ci];
          v += d * d;
        }
      var[ci] = v / static_cast<double>(m);
    }
    const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
    for (int64_t ci = 0; ci < c; ++ci) {
      state.running_mean[ci] = (1.0 - momentum) * state.running_mean[ci] + momentum * mean[ci];
      state.running_var[ci] = (1.0 - momentum) * state.running_var[ci] + momentum * var[ci] * unbias;
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  std::vector<double> inv_std(c);
  for (int64_t ci = 0; ci < c; ++ci) inv_std[ci] = 1.0 / std::sqrt(var[ci] + eps);

  std::vector<double> xhat(x->values.size());
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t si = 0; si < spatial; ++si) {
        const int64_t k = idx(ni, ci, si);
        xhat[k] = (x->values[k] - mean[ci]) * inv_std[ci];
        out->values[k] = gamma->values[ci] * xhat[k] + beta->values[ci];
      }

  const bool through_batch_stats = (mode == Mode::train);
  tape.record([x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std),
               n, c, spatial, m, through_batch_stats](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    auto idx = [c, spatial](int64_t ni, int64_t ci, int64_t si) {
      return (ni * c + ci) * spatial + si;
    };
    auto& dx = adj.of(x);
    auto& dgamma = adj.of(gamma);
    auto& dbeta = adj.of(beta);
    for (int64_t ci = 0; ci < c; ++ci) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t si = 0; si < spatial; ++si) {
          const int64_t k = idx(ni, ci, si);
          sum_dy += (*dout)[k];
          sum_dy_xhat += (*dout)[k] * xhat[k];
        }
      dgamma[ci] += sum_dy_xhat;
      dbeta[ci] += sum_dy;
      const double g = gamma->values[ci];
      if (through_batch_stats) {
        // dx = gamma*inv_std * (dy - mean(dy) - xhat * mean(dy*xhat))
        const double mean_dy = sum_dy / static_cast<double>(m);
        const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(m);
        for (int64_t ni = 0; ni < n; ++ni)
          for (int64_t si = 0; si < spatial; ++si) {
            const int64_t k = idx(ni, ci, si);
            dx[k] += g * inv_std[ci] * ((*dout)[k] - mean_dy - xhat[k] * mean_dy_xhat);
          }
      } else {
        for (int64_t ni = 0; ni < n; ++ni)
          for (int64_t si = 0; si < spatial; ++si) {
            const int64_t k = idx(ni, ci, si);
            dx[k] += g * inv_std[ci] * (*dout)[k];
          }
      }
    }
  });
  return out;
}

TensorPtr dropout(Tape& tape, const TensorPtr& x, double p, Mode mode,
                  std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must be in [0, 1)");
  if (mode == Mode::eval || p == 0.0) return x;
  const double keep = 1.0 - p;
  const double scale = 1.0 / keep;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> mask(x->values.size());
  auto out = make_tensor(x->shape);
  for (size_t i = 0; i < mask.size(); ++i) {
    mask[i] = uni(rng) < p ? 0.0 : scale;
    out->values[i] = x->values[i] * mask[i];
  }
  tape.record([x, out, mask = std::move(mask)](Adjoints& adj) {
    const auto* dout = adj.find(out.get());
    if (!dout) return;
    auto& din = adj.of(x);
    for (size_t i = 0; i < din.size(); ++i) din[i] += (*dout)[i] * mask[i];
  });
  return out;
}

}  // namespace evtrack::ad

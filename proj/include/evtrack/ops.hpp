#pragma once

#include <random>

#include "evtrack/tape.hpp"
#include "evtrack/tensor.hpp"

namespace evtrack::ad {

enum class Mode { train, eval };
enum class Activation { relu, sigmoid, tanh };

// x: [B,Cin,H,W], w: [Cout,Cin,kh,kw], bias: [Cout] or null.
TensorPtr conv2d(Tape& tape, const TensorPtr& x, const TensorPtr& w,
                 const TensorPtr& bias, int64_t stride, int64_t pad);

// k x k mean pooling; spatial dims must divide by k.
TensorPtr avg_pool2d(Tape& tape, const TensorPtr& x, int64_t k);

// Keeps the top-left new_h x new_w region of a [B,C,H,W] tensor.
TensorPtr crop2d(Tape& tape, const TensorPtr& x, int64_t new_h, int64_t new_w);

// x: [B,n], w: [m,n], bias: [m] or null -> [B,m].
TensorPtr linear(Tape& tape, const TensorPtr& x, const TensorPtr& w,
                 const TensorPtr& bias);

TensorPtr activation(Tape& tape, const TensorPtr& x, Activation kind);

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b);

// y = scale * x + shift, elementwise.
TensorPtr affine(Tape& tape, const TensorPtr& x, double scale, double shift);

TensorPtr reshape(Tape& tape, const TensorPtr& x, std::vector<int64_t> shape);

// Column range [c0, c1) of a [B,N] tensor.
TensorPtr slice_cols(Tape& tape, const TensorPtr& x, int64_t c0, int64_t c1);
TensorPtr concat_cols(Tape& tape, const TensorPtr& a, const TensorPtr& b);

// L tensors of identical shape -> [L, ...]; inverse of select_row.
TensorPtr stack_rows(Tape& tape, const std::vector<TensorPtr>& rows);
TensorPtr select_row(Tape& tape, const TensorPtr& x, int64_t i);

TensorPtr sum(Tape& tape, const TensorPtr& x);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  explicit BatchNormState(int64_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Per-channel normalization of [N,C] or [N,C,H,W]. Train mode normalizes by
// batch statistics and updates the running estimates in place; eval mode uses
// the running estimates only. Train mode requires N >= 2.
TensorPtr batch_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, BatchNormState& state, Mode mode,
                     double momentum, double eps);

// Inverted dropout: train zeroes with prob p and scales survivors by
// 1/(1-p); eval returns the input unchanged.
TensorPtr dropout(Tape& tape, const TensorPtr& x, double p, Mode mode,
                  std::mt19937_64& rng);

}  // namespace evtrack::ad

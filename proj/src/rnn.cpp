#include "evtrack/rnn.hpp"

namespace evtrack::ad {

namespace {

void check_cell_shapes(const TensorPtr& x, const CellParams& p, int64_t gates,
                       const char* what) {
  if (x->rank() != 2 || p.w_in->rank() != 2 || p.w_rec->rank() != 2) {
    throw ShapeError(std::string(what) + ": expected 2-d input and weights");
  }
  const int64_t gh = p.w_in->dim(0);
  if (gh % gates != 0 || p.w_rec->dim(0) != gh ||
      p.w_rec->dim(1) != gh / gates || p.bias->size() != gh ||
      p.w_in->dim(1) != x->dim(1)) {
    throw ShapeError(std::string(what) + ": inconsistent shapes, x " + shape_str(x->shape) +
                     ", w_in " + shape_str(p.w_in->shape) + ", w_rec " +
                     shape_str(p.w_rec->shape));
  }
}

}  // namespace

std::pair<TensorPtr, RecurrentState> lstm_cell(Tape& tape, const TensorPtr& x,
                                               const RecurrentState& state,
                                               const CellParams& p) {
  check_cell_shapes(x, p, 4, "lstm_cell");
  if (!state.c) throw ShapeError("lstm_cell: cell state missing");
  const int64_t hidden = p.w_rec->dim(1);
  require_same_shape(*state.h, *state.c, "lstm_cell");

  auto pre = add(tape, linear(tape, x, p.w_in, p.bias),
                 linear(tape, state.h, p.w_rec, nullptr));
  auto gi = activation(tape, slice_cols(tape, pre, 0, hidden), Activation::sigmoid);
  auto gf = activation(tape, slice_cols(tape, pre, hidden, 2 * hidden), Activation::sigmoid);
  auto gg = activation(tape, slice_cols(tape, pre, 2 * hidden, 3 * hidden), Activation::tanh);
  auto go = activation(tape, slice_cols(tape, pre, 3 * hidden, 4 * hidden), Activation::sigmoid);

  auto c_new = add(tape, mul(tape, gf, state.c), mul(tape, gi, gg));
  auto h_new = mul(tape, go, activation(tape, c_new, Activation::tanh));
  return {h_new, RecurrentState{h_new, c_new}};
}

TensorPtr gru_cell(Tape& tape, const TensorPtr& x, const TensorPtr& h,
                   const CellParams& p) {
  check_cell_shapes(x, p, 3, "gru_cell");
  const int64_t hidden = p.w_rec->dim(1);
  if (h->rank() != 2 || h->dim(1) != hidden) {
    throw ShapeError("gru_cell: hidden state " + shape_str(h->shape) + " vs hidden " +
                     std::to_string(hidden));
  }

  auto pre_x = linear(tape, x, p.w_in, p.bias);
  auto pre_h = linear(tape, h, p.w_rec, nullptr);
  auto z = activation(tape, add(tape, slice_cols(tape, pre_x, 0, hidden),
                                slice_cols(tape, pre_h, 0, hidden)),
                      Activation::sigmoid);
  auto r = activation(tape, add(tape, slice_cols(tape, pre_x, hidden, 2 * hidden),
                                slice_cols(tape, pre_h, hidden, 2 * hidden)),
                      Activation::sigmoid);
  auto n = activation(tape,
                      add(tape, slice_cols(tape, pre_x, 2 * hidden, 3 * hidden),
                          mul(tape, r, slice_cols(tape, pre_h, 2 * hidden, 3 * hidden))),
                      Activation::tanh);
  return add(tape, mul(tape, affine(tape, z, -1.0, 1.0), n), mul(tape, z, h));
}

TensorPtr run_recurrent(Tape& tape, const TensorPtr& seq, const RecurrentStack& stack) {
  if (seq->rank() != 3) {
    throw ShapeError("run_recurrent: expected [L,B,n], got " + shape_str(seq->shape));
  }
  if (stack.layers < 1) throw ShapeError("run_recurrent: needs at least one layer");
  const int64_t len = seq->dim(0);
  const int64_t batch = seq->dim(1);
  const int64_t hidden = stack.hidden;

  std::vector<TensorPtr> inputs(len);
  for (int64_t t = 0; t < len; ++t) inputs[t] = select_row(tape, seq, t);

  for (int64_t layer = 0; layer < stack.layers; ++layer) {
    std::vector<TensorPtr> outputs(len);
    for (int64_t dir = 0; dir < stack.directions(); ++dir) {
      const auto& params = stack.cell(layer, dir);
      RecurrentState state{make_tensor({batch, hidden}),
                           stack.kind == CellKind::lstm ? make_tensor({batch, hidden})
                                                        : nullptr};
      std::vector<TensorPtr> dir_out(len);
      for (int64_t s = 0; s < len; ++s) {
        const int64_t t = dir == 0 ? s : len - 1 - s;
        if (stack.kind == CellKind::lstm) {
          auto [h, next] = lstm_cell(tape, inputs[t], state, params);
          state = next;
          dir_out[t] = h;
        } else {
          auto h = gru_cell(tape, inputs[t], state.h, params);
          state.h = h;
          dir_out[t] = h;
        }
      }
      for (int64_t t = 0; t < len; ++t) {
        outputs[t] = dir == 0 ? dir_out[t] : concat_cols(tape, outputs[t], dir_out[t]);
      }
    }
    inputs = std::move(outputs);
  }
  return stack_rows(tape, inputs);
}

}  // namespace evtrack::ad

#pragma once

#include <utility>
#include <vector>

#include "evtrack/ops.hpp"

namespace evtrack::ad {

enum class CellKind { lstm, gru };

// Stacked gate parameters. LSTM packs rows as [i; f; g; o] (4H x n input map,
// 4H x H recurrent map); GRU packs [z; r; n] (3H rows). One bias vector per
// cell, applied on the input side.
struct CellParams {
  TensorPtr w_in;   // [G*H, n]
  TensorPtr w_rec;  // [G*H, H]
  TensorPtr bias;   // [G*H]
};

struct RecurrentState {
  TensorPtr h;  // [B, H]
  TensorPtr c;  // [B, H], present only for LSTM
};

// c' = f.c + i.g, h' = o.tanh(c') with i,f,o sigmoid gates and g tanh input.
std::pair<TensorPtr, RecurrentState> lstm_cell(Tape& tape, const TensorPtr& x,
                                               const RecurrentState& state,
                                               const CellParams& p);

// z,r sigmoid gates; n = tanh(Wn x + r.(Un h) + bn); h' = (1-z).n + z.h.
TensorPtr gru_cell(Tape& tape, const TensorPtr& x, const TensorPtr& h,
                   const CellParams& p);

struct RecurrentStack {
  CellKind kind = CellKind::lstm;
  int64_t layers = 1;
  bool bidirectional = false;
  int64_t hidden = 0;
  // One entry per (layer, direction), direction-minor: l0.fwd, [l0.bwd,] l1.fwd ...
  std::vector<CellParams> cells;

  int64_t directions() const { return bidirectional ? 2 : 1; }
  const CellParams& cell(int64_t layer, int64_t dir) const {
    return cells[static_cast<size_t>(layer * directions() + dir)];
  }
};

// Unrolls seq [L,B,n] through the stack from zero initial states and returns
// [L,B,hidden*directions]. Bidirectional runs a time-reversed pass and
// concatenates per step.
TensorPtr run_recurrent(Tape& tape, const TensorPtr& seq, const RecurrentStack& stack);

}  // namespace evtrack::ad

#pragma once

#include <array>
#include <utility>
#include <vector>

#include "mlnlu/autodiff.hpp"

namespace mlnlu {

/// One LSTM cell. Gate rows of W/U/b are stacked [input, forget, cell,
/// output], h rows each.
struct LstmCellParams {
  Var W;  // {4h, d_in}
  Var U;  // {4h, h}
  Var b;  // {4h}
};

/// Standard recurrence: i,f,o = sigmoid, g = tanh, c = f*c_prev + i*g,
/// h = o * tanh(c).
std::pair<Var, Var> step_lstm_cell(const Var& x, const Var& h_prev,
                                   const Var& c_prev, const LstmCellParams& p);

/// 2-layer bidirectional LSTM. Output per token is the forward and backward
/// hidden states concatenated, width 2h.
struct BiLstmEncoder {
  Index d_in = 0;
  Index h = 0;  // per direction
  double dropout_rate = 0.2;
  std::vector<std::array<LstmCellParams, 2>> layers;  // [layer][0)=fwd (1)=bwd
};

/// Xavier-uniform weights; biases zero except the forget gate's, which is 1
/// so early training does not forget everything.
BiLstmEncoder make_encoder(Index d_in, Index h, double dropout_rate, Rng& rng);

/// embedded is {T, d_in} with rows [0, n_real) real and the rest zero pads.
/// Padded rows yield zero output rows and never influence real positions:
/// the backward direction starts at n_real - 1. Train mode applies
/// inter-layer dropout and requires drop_rng.
Var encode(const BiLstmEncoder& enc, const Var& embedded, Index n_real,
           Mode mode, Rng* drop_rng = nullptr);

/// Trainable parameters in a fixed (layer, direction, W/U/b) order.
std::vector<Var> encoder_params(const BiLstmEncoder& enc);

void set_encoder_freeze(BiLstmEncoder& enc, bool frozen);

}  // namespace mlnlu

#include "mlnlu/encoder.hpp"

namespace mlnlu {

std::pair<Var, Var> step_lstm_cell(const Var& x, const Var& h_prev,
                                   const Var& c_prev, const LstmCellParams& p) {
  const Index h = p.U.value().dim(1);
  Var gates = add(add(matmul(p.W, x), matmul(p.U, h_prev)), p.b);  // {4h}
  Var i = sigmoid(slice(gates, 0, h));
  Var f = sigmoid(slice(gates, h, h));
  Var g = tanh(slice(gates, 2 * h, h));
  Var o = sigmoid(slice(gates, 3 * h, h));
  Var c = add(mul(f, c_prev), mul(i, g));
  return {mul(o, tanh(c)), c};
}

BiLstmEncoder make_encoder(Index d_in, Index h, double dropout_rate, Rng& rng) {
  if (d_in < 1 || h < 1) throw ConfigError("encoder dims must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ConfigError("encoder dropout outside [0,1)");
  BiLstmEncoder enc;
  enc.d_in = d_in;
  enc.h = h;
  enc.dropout_rate = dropout_rate;
  const Index n_layers = 2;
  for (Index l = 0; l < n_layers; ++l) {
    const Index layer_in = (l == 0) ? d_in : 2 * h;
    std::array<LstmCellParams, 2> dirs;
    for (int d = 0; d < 2; ++d) {
      Tensord W({4 * h, layer_in});
      W.fill_xavier(rng);
      Tensord U({4 * h, h});
      U.fill_xavier(rng);
      Tensord b = Tensord::zeros({4 * h});
      for (Index k = h; k < 2 * h; ++k) b[k] = 1.0;  // forget gate
      dirs[static_cast<std::size_t>(d)] =
          LstmCellParams{Var::leaf(std::move(W)), Var::leaf(std::move(U)),
                         Var::leaf(std::move(b))};
    }
    enc.layers.push_back(std::move(dirs));
  }
  return enc;
}

namespace {

// One direction over rows [0, n_real) of input; returns per-position h.
std::vector<Var> run_direction(const Var& input, Index n_real,
                               const LstmCellParams& cell, Index h,
                               bool backward) {
  Var h_state = Var::constant(Tensord::zeros({h}));
  Var c_state = Var::constant(Tensord::zeros({h}));
  std::vector<Var> states(static_cast<std::size_t>(n_real));
  for (Index step = 0; step < n_real; ++step) {
    const Index t = backward ? n_real - 1 - step : step;
    auto [hn, cn] = step_lstm_cell(row(input, t), h_state, c_state, cell);
    h_state = hn;
    c_state = cn;
    states[static_cast<std::size_t>(t)] = hn;
  }
  return states;
}

}  // namespace

Var encode(const BiLstmEncoder& enc, const Var& embedded, Index n_real,
           Mode mode, Rng* drop_rng) {
  if (embedded.value().rank() != 2 || embedded.value().dim(1) != enc.d_in)
    throw DimensionError("encode: input " + shape_str(embedded.shape()) +
                         " does not match d_in " + std::to_string(enc.d_in));
  const Index total = embedded.value().dim(0);
  if (n_real < 1 || n_real > total)
    throw DimensionError("encode: n_real out of range");
  if (mode == Mode::Train && enc.dropout_rate > 0.0 && !drop_rng)
    throw ConfigError("encode: train mode needs a dropout rng");

  Var layer_in = embedded;
  for (std::size_t l = 0; l < enc.layers.size(); ++l) {
    std::vector<Var> fwd = run_direction(layer_in, n_real, enc.layers[l][0],
                                         enc.h, false);
    std::vector<Var> bwd = run_direction(layer_in, n_real, enc.layers[l][1],
                                         enc.h, true);
    std::vector<Var> rows;
    rows.reserve(static_cast<std::size_t>(n_real));
    for (Index t = 0; t < n_real; ++t)
      rows.push_back(concat({fwd[static_cast<std::size_t>(t)],
                             bwd[static_cast<std::size_t>(t)]}));
    Var out = stack_rows(rows);  // {n_real, 2h}
    if (total > n_real) out = pad_rows(out, total);
    if (mode == Mode::Train && enc.dropout_rate > 0.0 &&
        l + 1 < enc.layers.size())
      out = dropout(out, enc.dropout_rate, mode, *drop_rng);
    layer_in = out;
  }
  return layer_in;
}

std::vector<Var> encoder_params(const BiLstmEncoder& enc) {
  std::vector<Var> out;
  for (const auto& layer : enc.layers)
    for (const LstmCellParams& cell : layer) {
      out.push_back(cell.W);
      out.push_back(cell.U);
      out.push_back(cell.b);
    }
  return out;
}

void set_encoder_freeze(BiLstmEncoder& enc, bool frozen) {
  for (auto& layer : enc.layers)
    for (LstmCellParams& cell : layer) {
      cell.W.set_requires_grad(!frozen);
      cell.U.set_requires_grad(!frozen);
      cell.b.set_requires_grad(!frozen);
    }
}

}  // namespace mlnlu

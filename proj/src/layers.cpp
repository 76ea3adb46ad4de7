#include "medfuse/layers.hpp"

#include <cmath>

namespace medfuse {

LstmCellParams make_lstm_cell(Index input_dim, Index hidden_dim, Rng& rng) {
  LstmCellParams p;
  const Scalar bound_ih = 1.0 / std::sqrt(static_cast<Scalar>(input_dim));
  const Scalar bound_hh = 1.0 / std::sqrt(static_cast<Scalar>(hidden_dim));
  p.w_ih = Tensor::uniform({4 * hidden_dim, input_dim}, -bound_ih, bound_ih, rng, true);
  p.w_hh = Tensor::uniform({4 * hidden_dim, hidden_dim}, -bound_hh, bound_hh, rng, true);
  p.bias = Tensor::zeros({4 * hidden_dim});
  p.bias.set_requires_grad(true);
  // Forget-gate slice.
  for (Index i = hidden_dim; i < 2 * hidden_dim; ++i) p.bias.data()[i] = 1.0;
  return p;
}

LstmState lstm_cell_step(const LstmCellParams& params, const Tensor& x_t, const Tensor& h_prev,
                         const Tensor& c_prev) {
  const Index hidden = params.hidden_dim();
  if (x_t.rank() != 2 || x_t.cols() != params.input_dim()) {
    throw DimensionError("lstm_cell_step input " + shape_string(x_t.shape()) +
                         " does not match cell input dim " + std::to_string(params.input_dim()));
  }
  if (h_prev.rank() != 2 || h_prev.cols() != hidden || c_prev.rank() != 2 ||
      c_prev.cols() != hidden || h_prev.rows() != x_t.rows() || c_prev.rows() != x_t.rows()) {
    throw DimensionError("lstm_cell_step state shapes " + shape_string(h_prev.shape()) + ", " +
                         shape_string(c_prev.shape()) + " do not match input " +
                         shape_string(x_t.shape()) + " and hidden dim " + std::to_string(hidden));
  }
  Tensor pre = add(add(matmul(x_t, params.w_ih, false, true),
                       matmul(h_prev, params.w_hh, false, true)),
                   params.bias);
  Tensor gate_i = sigmoid(slice_cols(pre, 0, hidden));
  Tensor gate_f = sigmoid(slice_cols(pre, hidden, hidden));
  Tensor cand = tanh(slice_cols(pre, 2 * hidden, hidden));
  Tensor gate_o = sigmoid(slice_cols(pre, 3 * hidden, hidden));
  Tensor c = add(mul(gate_f, c_prev), mul(gate_i, cand));
  Tensor h = mul(gate_o, tanh(c));
  return {h, c};
}

Tensor stacked_lstm_forward(const std::vector<LstmCellParams>& layers, const Tensor& x,
                            Scalar dropout_rate, bool training, Rng& rng) {
  if (layers.empty()) throw ValidationError("stacked_lstm_forward needs at least one layer");
  if (x.rank() != 3) {
    throw DimensionError("stacked_lstm_forward expects B x T x D input, got " +
                         shape_string(x.shape()));
  }
  const Index batch = x.dim(0), steps = x.dim(1);
  if (steps < 1) throw ValidationError("stacked_lstm_forward: empty sequence (T == 0)");
  if (x.dim(2) != layers.front().input_dim()) {
    throw DimensionError("stacked_lstm_forward feature dim " + std::to_string(x.dim(2)) +
                         " does not match first layer input dim " +
                         std::to_string(layers.front().input_dim()));
  }
  std::vector<LstmState> states;
  states.reserve(layers.size());
  for (const LstmCellParams& layer : layers) {
    states.push_back({Tensor::zeros({batch, layer.hidden_dim()}),
                      Tensor::zeros({batch, layer.hidden_dim()})});
  }
  for (Index t = 0; t < steps; ++t) {
    Tensor input = slice_time(x, t);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (l > 0) input = dropout(input, dropout_rate, training, rng);
      states[l] = lstm_cell_step(layers[l], input, states[l].h, states[l].c);
      input = states[l].h;
    }
  }
  return states.back().h;
}

ConvBlockParams make_conv_block(Index in_ch, Index out_ch, Index ksize, Index stride,
                                bool uses_residual, Rng& rng) {
  ConvBlockParams p;
  const Scalar bound = 1.0 / std::sqrt(static_cast<Scalar>(in_ch * ksize * ksize));
  p.kernels = Tensor::uniform({out_ch, in_ch, ksize, ksize}, -bound, bound, rng, true);
  p.bias = Tensor::zeros({out_ch});
  p.bias.set_requires_grad(true);
  p.stride = stride;
  p.uses_residual = uses_residual;
  if (uses_residual && (in_ch != out_ch || stride != 1)) {
    const Scalar sbound = 1.0 / std::sqrt(static_cast<Scalar>(in_ch));
    p.shortcut_kernels = Tensor::uniform({out_ch, in_ch, 1, 1}, -sbound, sbound, rng, true);
    p.shortcut_bias = Tensor::zeros({out_ch});
    p.shortcut_bias.set_requires_grad(true);
  }
  return p;
}

Tensor conv_forward(const ConvBlockParams& block, const Tensor& x) {
  Tensor y = conv2d(x, block.kernels, block.bias, block.stride);
  if (!block.uses_residual) return y;
  Tensor shortcut = block.shortcut_kernels.defined()
                        ? conv2d(x, block.shortcut_kernels, block.shortcut_bias, block.stride)
                        : x;
  return relu(add(y, shortcut));
}

LinearParams make_linear(Index input_dim, Index output_dim, Rng& rng) {
  LinearParams p;
  const Scalar bound = 1.0 / std::sqrt(static_cast<Scalar>(input_dim));
  p.weight = Tensor::uniform({output_dim, input_dim}, -bound, bound, rng, true);
  p.bias = Tensor::zeros({output_dim});
  p.bias.set_requires_grad(true);
  return p;
}

Tensor linear_forward(const LinearParams& params, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != params.input_dim()) {
    throw DimensionError("linear_forward input " + shape_string(x.shape()) +
                         " does not match weight " + shape_string(params.weight.shape()));
  }
  return add(matmul(x, params.weight, false, true), params.bias);
}

}  // namespace medfuse

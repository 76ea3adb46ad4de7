#pragma once

#include "medfuse/ops.hpp"

namespace medfuse {

/// Gate order in the packed 4H dimension is (input, forget, cell, output).
struct LstmCellParams {
  Tensor w_ih;  // 4H x D
  Tensor w_hh;  // 4H x H
  Tensor bias;  // 4H
  Index input_dim() const { return w_ih.cols(); }
  Index hidden_dim() const { return w_hh.cols(); }
};

/// Weights uniform in +-1/sqrt(fan_in); forget-gate bias slice set to 1.0 to
/// keep the memory path open early in training.
LstmCellParams make_lstm_cell(Index input_dim, Index hidden_dim, Rng& rng);

struct LstmState {
  Tensor h;
  Tensor c;
};

/// One LSTM step: i,f,o sigmoid gates, tanh candidate g,
/// c = f*c_prev + i*g, h = o*tanh(c).
LstmState lstm_cell_step(const LstmCellParams& params, const Tensor& x_t, const Tensor& h_prev,
                         const Tensor& c_prev);

/// Runs stacked LSTM layers over x (B x T x D) from zero initial state and
/// returns the top layer's last hidden state (B x H_last). Dropout is applied
/// between layers only.
Tensor stacked_lstm_forward(const std::vector<LstmCellParams>& layers, const Tensor& x,
                            Scalar dropout_rate, bool training, Rng& rng);

struct ConvBlockParams {
  Tensor kernels;  // O x C x k x k
  Tensor bias;     // O
  Index stride = 1;
  bool uses_residual = false;
  // 1x1 projection shortcut, present when the identity skip does not fit.
  Tensor shortcut_kernels;
  Tensor shortcut_bias;
  Index in_channels() const { return kernels.dim(1); }
  Index out_channels() const { return kernels.dim(0); }
};

ConvBlockParams make_conv_block(Index in_ch, Index out_ch, Index ksize, Index stride,
                                bool uses_residual, Rng& rng);

/// Same-padded convolution; residual blocks add the (possibly projected)
/// shortcut and apply ReLU, plain blocks stay linear.
Tensor conv_forward(const ConvBlockParams& block, const Tensor& x);

struct LinearParams {
  Tensor weight;  // O x I
  Tensor bias;    // O
  Index input_dim() const { return weight.cols(); }
  Index output_dim() const { return weight.rows(); }
};

LinearParams make_linear(Index input_dim, Index output_dim, Rng& rng);

/// x W^T + b for x of shape B x I.
Tensor linear_forward(const LinearParams& params, const Tensor& x);

}  // namespace medfuse

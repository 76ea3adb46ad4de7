#pragma once

#include "medfuse/layers.hpp"

namespace medfuse {

/// Stacked-LSTM encoder for the clinical time-series modality. The default
/// configuration is two layers, 76 -> 256 -> 256, with dropout between them.
struct EhrEncoderParams {
  std::vector<LstmCellParams> lstm_layers;
  Scalar dropout_rate = 0.3;
  Index feature_dim() const { return lstm_layers.front().input_dim(); }
  Index output_dim() const { return lstm_layers.back().hidden_dim(); }
};

EhrEncoderParams make_ehr_encoder(Index feature_dim, Index hidden_dim, Index num_layers,
                                  Scalar dropout_rate, Rng& rng);

/// Last hidden state of the top LSTM layer: (B x T x D) -> (B x hidden).
Tensor encode_ehr(const EhrEncoderParams& params, const Tensor& x, bool training, Rng& rng);

/// Residual convolutional stack for the image modality. Stage transitions
/// downsample with stride 2; global average pooling plus a linear head keep
/// the output width at `feature_dim` regardless of input resolution.
struct CxrEncoderConfig {
  Index in_channels = 3;
  Index input_resolution = 224;
  std::vector<Index> stage_widths = {16, 32, 64, 128};
  Index blocks_per_stage = 2;
  Index kernel_size = 3;
  Index feature_dim = 512;
};

struct CxrEncoderParams {
  CxrEncoderConfig config;
  ConvBlockParams stem;
  std::vector<ConvBlockParams> blocks;
  LinearParams head;
  Index output_dim() const { return head.output_dim(); }
};

CxrEncoderParams make_cxr_encoder(const CxrEncoderConfig& config, Rng& rng);

/// head(global_avg_pool(conv_stack(x))): (B x C x R x R) -> (B x feature_dim).
Tensor encode_cxr(const CxrEncoderParams& params, const Tensor& x, bool training, Rng& rng);

/// Single linear layer followed by sigmoid.
struct ClassifierParams {
  LinearParams linear;
  Index label_count() const { return linear.output_dim(); }
  Index feature_dim() const { return linear.input_dim(); }
};

ClassifierParams make_classifier(Index feature_dim, Index label_count, Rng& rng);

Tensor classify_logits(const ClassifierParams& params, const Tensor& features);
/// Probabilities in (0, 1).
Tensor classify(const ClassifierParams& params, const Tensor& features);

}  // namespace medfuse

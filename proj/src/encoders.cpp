#include "medfuse/encoders.hpp"

namespace medfuse {

EhrEncoderParams make_ehr_encoder(Index feature_dim, Index hidden_dim, Index num_layers,
                                  Scalar dropout_rate, Rng& rng) {
  if (num_layers < 1) throw ValidationError("EHR encoder needs at least one LSTM layer");
  EhrEncoderParams p;
  p.dropout_rate = dropout_rate;
  Index in = feature_dim;
  for (Index l = 0; l < num_layers; ++l) {
    p.lstm_layers.push_back(make_lstm_cell(in, hidden_dim, rng));
    in = hidden_dim;
  }
  return p;
}

Tensor encode_ehr(const EhrEncoderParams& params, const Tensor& x, bool training, Rng& rng) {
  if (x.rank() != 3 || x.dim(2) != params.feature_dim()) {
    throw DimensionError("encode_ehr expects B x T x " + std::to_string(params.feature_dim()) +
                         " input, got " + shape_string(x.shape()));
  }
  return stacked_lstm_forward(params.lstm_layers, x, params.dropout_rate, training, rng);
}

CxrEncoderParams make_cxr_encoder(const CxrEncoderConfig& config, Rng& rng) {
  if (config.stage_widths.empty()) throw ValidationError("CXR encoder needs at least one stage");
  if (config.blocks_per_stage < 1) throw ValidationError("CXR encoder needs blocks_per_stage >= 1");
  CxrEncoderParams p;
  p.config = config;
  p.stem = make_conv_block(config.in_channels, config.stage_widths.front(), config.kernel_size,
                           /*stride=*/1, /*uses_residual=*/false, rng);
  Index in = config.stage_widths.front();
  for (std::size_t s = 0; s < config.stage_widths.size(); ++s) {
    const Index width = config.stage_widths[s];
    for (Index b = 0; b < config.blocks_per_stage; ++b) {
      // First block of each later stage downsamples.
      const Index stride = (b == 0 && s > 0) ? 2 : 1;
      p.blocks.push_back(make_conv_block(in, width, config.kernel_size, stride,
                                         /*uses_residual=*/true, rng));
      in = width;
    }
  }
  p.head = make_linear(in, config.feature_dim, rng);
  return p;
}

Tensor encode_cxr(const CxrEncoderParams& params, const Tensor& x, bool training, Rng& rng) {
  (void)training;
  (void)rng;
  const CxrEncoderConfig& cfg = params.config;
  if (x.rank() != 4 || x.dim(1) != cfg.in_channels) {
    throw DimensionError("encode_cxr expects B x " + std::to_string(cfg.in_channels) +
                         " x R x R input, got " + shape_string(x.shape()));
  }
  if (x.dim(2) != cfg.input_resolution || x.dim(3) != cfg.input_resolution) {
    throw DimensionError("encode_cxr expects " + std::to_string(cfg.input_resolution) + "x" +
                         std::to_string(cfg.input_resolution) + " images, got " +
                         shape_string(x.shape()));
  }
  Tensor h = relu(conv_forward(params.stem, x));
  for (const ConvBlockParams& block : params.blocks) h = conv_forward(block, h);
  return linear_forward(params.head, global_avg_pool(h));
}

ClassifierParams make_classifier(Index feature_dim, Index label_count, Rng& rng) {
  return ClassifierParams{make_linear(feature_dim, label_count, rng)};
}

Tensor classify_logits(const ClassifierParams& params, const Tensor& features) {
  return linear_forward(params.linear, features);
}

Tensor classify(const ClassifierParams& params, const Tensor& features) {
  return sigmoid(classify_logits(params, features));
}

}  // namespace medfuse

#include "medfuse/fusion.hpp"

namespace medfuse {

FusionParams make_fusion(Index cxr_dim, Index ehr_dim, Index hidden_dim, Index n_labels,
                         Rng& rng) {
  FusionParams p;
  p.projection = make_linear(cxr_dim, ehr_dim, rng);
  p.fusion_lstm = make_lstm_cell(ehr_dim, hidden_dim, rng);
  p.classifier = make_classifier(hidden_dim, n_labels, rng);
  return p;
}

std::string missing_mode_name(MissingVectorMode mode) {
  return mode == MissingVectorMode::zeros ? "zeros" : "learnable";
}

MissingVectorMode missing_mode_from_name(const std::string& name) {
  if (name == "zeros") return MissingVectorMode::zeros;
  if (name == "learnable") return MissingVectorMode::learnable;
  throw ValidationError("unknown missing-vector mode '" + name + "'");
}

ConcatFusionParams make_concat_fusion(Index cxr_dim, Index ehr_dim, Index hidden_dim,
                                      Index n_labels, MissingVectorMode mode, Rng& rng) {
  ConcatFusionParams p;
  p.projection = make_linear(cxr_dim, ehr_dim, rng);
  p.head_hidden = make_linear(2 * ehr_dim, hidden_dim, rng);
  p.head_out = make_linear(hidden_dim, n_labels, rng);
  p.mode = mode;
  p.missing_vector = Tensor::zeros({cxr_dim});
  if (mode == MissingVectorMode::learnable) p.missing_vector.set_requires_grad(true);
  return p;
}

namespace {

void check_batch(const Batch& batch) {
  if (!batch.x_ehr.defined() || batch.size == 0) {
    throw ValidationError("fusion forward: batch has no time-series input");
  }
  if (!batch.paired_rows.empty() && !batch.x_cxr.defined()) {
    throw ValidationError("fusion forward: paired rows present but no image tensor");
  }
}

}  // namespace

Tensor medfuse_forward_logits(const EhrEncoderParams& ehr, const CxrEncoderParams& cxr,
                              const FusionParams& fusion, const Batch& batch, bool training,
                              Rng& rng) {
  check_batch(batch);
  Tensor v_ehr = encode_ehr(ehr, batch.x_ehr, training, rng);
  // First token: every instance starts from v_ehr and zero state.
  const Index hidden = fusion.hidden_dim();
  LstmState state =
      lstm_cell_step(fusion.fusion_lstm, v_ehr, Tensor::zeros({batch.size, hidden}),
                     Tensor::zeros({batch.size, hidden}));
  Tensor last_h = state.h;
  if (!batch.paired_rows.empty()) {
    // Second token only for rows that have an image.
    Tensor v_cxr = encode_cxr(cxr, batch.x_cxr, training, rng);
    Tensor projected = linear_forward(fusion.projection, v_cxr);
    LstmState paired = lstm_cell_step(fusion.fusion_lstm, projected,
                                      gather_rows(state.h, batch.paired_rows),
                                      gather_rows(state.c, batch.paired_rows));
    last_h = merge_rows(last_h, paired.h, batch.paired_rows);
  }
  return classify_logits(fusion.classifier, last_h);
}

Tensor medfuse_forward(const EhrEncoderParams& ehr, const CxrEncoderParams& cxr,
                       const FusionParams& fusion, const Batch& batch, bool training, Rng& rng) {
  return sigmoid(medfuse_forward_logits(ehr, cxr, fusion, batch, training, rng));
}

Tensor concat_fusion_forward_logits(const EhrEncoderParams& ehr, const CxrEncoderParams& cxr,
                                    const ConcatFusionParams& concat, const Batch& batch,
                                    bool training, Rng& rng) {
  check_batch(batch);
  Tensor v_ehr = encode_ehr(ehr, batch.x_ehr, training, rng);
  Tensor v_cxr_full;
  if (batch.paired_rows.empty()) {
    v_cxr_full = assemble_rows(batch.size, Tensor(), {}, concat.missing_vector);
  } else {
    Tensor v_cxr = encode_cxr(cxr, batch.x_cxr, training, rng);
    v_cxr_full = assemble_rows(batch.size, v_cxr, batch.paired_rows, concat.missing_vector);
  }
  Tensor projected = linear_forward(concat.projection, v_cxr_full);
  Tensor features = concat_cols(v_ehr, projected);
  Tensor hidden = relu(linear_forward(concat.head_hidden, features));
  return linear_forward(concat.head_out, hidden);
}

Tensor early_fusion_forward(const EhrEncoderParams& ehr, const CxrEncoderParams& cxr,
                            const ConcatFusionParams& concat, const Batch& batch, bool training,
                            Rng& rng) {
  return sigmoid(concat_fusion_forward_logits(ehr, cxr, concat, batch, training, rng));
}

Tensor joint_fusion_forward(const EhrEncoderParams& ehr, const CxrEncoderParams& cxr,
                            const ConcatFusionParams& concat, const Batch& batch, bool training,
                            Rng& rng) {
  return sigmoid(concat_fusion_forward_logits(ehr, cxr, concat, batch, training, rng));
}

}  // namespace medfuse

#pragma once

#include "medfuse/data.hpp"
#include "medfuse/encoders.hpp"

namespace medfuse {

/// Sequence-fusion module: a projection that maps the image representation
/// onto the clinical one's width, a single fusion LSTM cell, and a linear
/// classifier over its last hidden state.
struct FusionParams {
  LinearParams projection;     // cxr_dim -> ehr_dim
  LstmCellParams fusion_lstm;  // ehr_dim -> hidden
  ClassifierParams classifier;
  Index hidden_dim() const { return fusion_lstm.hidden_dim(); }
};

FusionParams make_fusion(Index cxr_dim, Index ehr_dim, Index hidden_dim, Index n_labels,
                         Rng& rng);

enum class MissingVectorMode { zeros, learnable };
std::string missing_mode_name(MissingVectorMode mode);
MissingVectorMode missing_mode_from_name(const std::string& name);

/// Concatenation fusion (early/joint baselines): projected image features are
/// concatenated with the clinical ones and classified by a two-layer head.
/// When the image is missing, `missing_vector` (learnable or all-zero,
/// depending on mode) substitutes the image representation before the
/// projection.
struct ConcatFusionParams {
  LinearParams projection;   // cxr_dim -> ehr_dim
  LinearParams head_hidden;  // (2 * ehr_dim) -> hidden, ReLU after
  LinearParams head_out;     // hidden -> n_labels
  Tensor missing_vector;     // cxr_dim
  MissingVectorMode mode = MissingVectorMode::learnable;
};

ConcatFusionParams make_concat_fusion(Index cxr_dim, Index ehr_dim, Index hidden_dim,
                                      Index n_labels, MissingVectorMode mode, Rng& rng);

/// The fusion LSTM consumes [v_ehr, projected v_cxr] for paired instances and
/// the single-element sequence [v_ehr] for image-missing ones; the classifier
/// reads the last hidden state. Returns logits (B x L).
Tensor medfuse_forward_logits(const EhrEncoderParams& ehr, const CxrEncoderParams& cxr,
                              const FusionParams& fusion, const Batch& batch, bool training,
                              Rng& rng);
/// Probability wrapper over medfuse_forward_logits; every entry in (0, 1).
Tensor medfuse_forward(const EhrEncoderParams& ehr, const CxrEncoderParams& cxr,
                       const FusionParams& fusion, const Batch& batch, bool training, Rng& rng);

/// Shared forward for the concatenation baselines. Early fusion runs it with
/// frozen encoders, joint fusion with everything trainable; the graph is
/// identical.
Tensor concat_fusion_forward_logits(const EhrEncoderParams& ehr, const CxrEncoderParams& cxr,
                                    const ConcatFusionParams& concat, const Batch& batch,
                                    bool training, Rng& rng);
Tensor early_fusion_forward(const EhrEncoderParams& ehr, const CxrEncoderParams& cxr,
                            const ConcatFusionParams& concat, const Batch& batch, bool training,
                            Rng& rng);
Tensor joint_fusion_forward(const EhrEncoderParams& ehr, const CxrEncoderParams& cxr,
                            const ConcatFusionParams& concat, const Batch& batch, bool training,
                            Rng& rng);

}  // namespace medfuse

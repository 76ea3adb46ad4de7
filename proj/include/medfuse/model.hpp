#pragma once

#include <optional>

#include "medfuse/fusion.hpp"

namespace medfuse {

enum class ModelKind { lstm_uni, medfuse, early_fusion, joint_fusion };
std::string model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

enum class Stage { pretrain_ehr, pretrain_cxr, finetune_fusion };
std::string stage_name(Stage stage);
Stage stage_from_name(const std::string& name);

struct ModelConfig {
  Task task = Task::mortality;
  ModelKind kind = ModelKind::medfuse;
  Index ehr_feature_dim = kFeatureWidth;
  Index ehr_hidden_dim = 256;
  Index ehr_layers = 2;
  Scalar ehr_dropout = 0.3;
  CxrEncoderConfig cxr;  // cxr.feature_dim = 512 by default
  Index fusion_hidden_dim = 512;
  MissingVectorMode missing_mode = MissingVectorMode::learnable;
};

/// Full parameter bundle for one model. Pretraining heads exist alongside the
/// fusion parts so the two-stage protocol can run in place.
struct Model {
  ModelConfig config;
  EhrEncoderParams ehr;
  ClassifierParams ehr_head;  // task labels from v_ehr
  std::optional<CxrEncoderParams> cxr;
  std::optional<ClassifierParams> cxr_head;  // radiology labels from v_cxr
  std::optional<FusionParams> fusion;
  std::optional<ConcatFusionParams> concat;
};

Model make_model(const ModelConfig& config, Rng& rng);

/// Stable name -> tensor list over every parameter in the model; checkpoint
/// save/load and the optimizer address parameters through it.
std::vector<std::pair<std::string, Tensor>> named_parameters(const Model& model);

/// Parameters updated in a given stage. Early fusion freezes both encoders
/// during fine-tuning; a zeros-mode missing vector is never trainable.
std::vector<Tensor> trainable_parameters(const Model& model, Stage stage);

/// Marks encoder parameters non-trainable (early fusion contract).
void freeze_encoders(Model& model);

/// Task-label logits for the model's architecture (B x L).
Tensor model_logits(const Model& model, const Batch& batch, bool training, Rng& rng);
/// Stage-specific training logits: pretraining stages use the uni-modal
/// heads, fine-tuning uses the fusion architecture.
Tensor stage_logits(const Model& model, Stage stage, const Batch& batch, bool training, Rng& rng);
/// Targets matching stage_logits (task labels, or radiology labels for the
/// image pretraining stage).
Tensor stage_targets(const Model& model, Stage stage, const Batch& batch);

}  // namespace medfuse

#pragma once

#include "json.hpp"
#include "medfuse/evaluate.hpp"

namespace medfuse {

enum class TrainSet { paired, partial };
std::string train_set_name(TrainSet set);
TrainSet train_set_from_name(const std::string& name);

/// Training knobs. The defaults pin the protocol: batch size 16, at most 50
/// epochs, early stopping after 15 non-improving epochs, learning-rate search
/// over [1e-5, 1e-3].
struct TrainConfig {
  Scalar learning_rate = 1e-4;
  Index batch_size = 16;
  Index max_epochs = 50;
  Index patience = 15;
  Stage stage = Stage::finetune_fusion;
  TrainSet train_set = TrainSet::partial;
  Scalar unimodal_fraction = 1.0;
  MissingVectorMode missing_vector_mode = MissingVectorMode::learnable;
  std::uint64_t seed = 0;
  Scalar lr_search_min = 1e-5;
  Scalar lr_search_max = 1e-3;
  bool pretrained_init = true;  // fine-tune from pretrained encoders
  Scalar grad_clip_norm = 5.0;
  bool verbose = false;
};

nlohmann::ordered_json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::ordered_json& j);

/// Mean binary cross-entropy of logits against binary targets (stable logit
/// form; see bce_with_logits).
inline Tensor bce_loss(const Tensor& targets, const Tensor& logits) {
  return bce_with_logits(logits, targets);
}

struct AdamConfig {
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar epsilon = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list; first/second moment
/// buffers mirror the parameter shapes.
class AdamState {
 public:
  explicit AdamState(std::vector<Tensor> params, AdamConfig config = {});
  /// One update from the parameters' current gradients; a trainable
  /// parameter without a populated gradient is a contract violation.
  void step(Scalar learning_rate);
  Index step_count() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<Tensor> params_;
  std::vector<ArrayXs> m_;
  std::vector<ArrayXs> v_;
  Index t_ = 0;
  AdamConfig config_;
};

void zero_gradients(const std::vector<Tensor>& params);
Scalar global_grad_norm(const std::vector<Tensor>& params);
/// Scales gradients so their global norm is at most max_norm.
void clip_gradients(const std::vector<Tensor>& params, Scalar max_norm);

// ---------------------------------------------------------------------------
// Checkpoints ("MFCK1" container)

struct Checkpoint {
  int version = 1;
  nlohmann::ordered_json config;  // model + train config, task, registry hash
  Scalar best_val_auroc = 0.0;
  Index epoch = 0;
  std::vector<std::pair<std::string, Tensor>> params;  // deep copies
};

Checkpoint snapshot_model(const Model& model, const TrainConfig& config, Scalar val_auroc,
                          Index epoch, const std::string& registry_hash);
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
/// Rebuilds the model described by the checkpoint and copies its parameters.
Model model_from_checkpoint(const Checkpoint& checkpoint);
/// Copies checkpoint parameters into an existing model by name
/// (shape-checked). A non-empty prefix list restricts the copy to matching
/// names, e.g. {"ehr.", "cxr."} transfers pretrained encoders only.
void load_parameters(Model& model, const Checkpoint& checkpoint,
                     const std::vector<std::string>& prefixes = {});
std::string checkpoint_registry_hash(const Checkpoint& checkpoint);

// ---------------------------------------------------------------------------
// Stage training

/// Fine-tuning set selection: every paired instance plus a seeded subsample
/// of the uni-modal ones (`unimodal_fraction` of those available). The paired
/// train set drops uni-modal instances entirely.
std::vector<Index> select_finetune_instances(const std::vector<MultimodalInstance>& instances,
                                             TrainSet train_set, Scalar unimodal_fraction,
                                             std::uint64_t seed);

struct StageResult {
  Checkpoint best;
  std::vector<Scalar> epoch_val_auroc;
  std::vector<Scalar> epoch_train_loss;
  Index best_epoch = 0;
  Index epochs_run = 0;
};

/// Runs one stage with shuffled mini-batches, per-epoch validation AUROC and
/// early stopping; returns (and restores into the model) the parameters of
/// the best-validation epoch.
StageResult run_stage(const TrainConfig& config, Model& model, const DatasetSplit& split,
                      const std::string& registry_hash);

struct LrRun {
  Scalar learning_rate = 0.0;
  Scalar val_auroc = 0.0;
};

struct LrSearchResult {
  Scalar best_lr = 0.0;
  Checkpoint best;
  std::vector<LrRun> runs;
};

/// Samples n_runs learning rates log-uniformly in [lr_search_min,
/// lr_search_max], trains a fresh model from `factory` for each, and returns
/// the run with the best validation AUROC.
LrSearchResult search_learning_rate(Index n_runs, Rng& rng, const TrainConfig& base,
                                    const DatasetSplit& split, const std::string& registry_hash,
                                    const std::function<Model(std::uint64_t)>& factory);

}  // namespace medfuse

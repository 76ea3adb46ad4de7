#pragma once

#include "medfuse/metrics.hpp"
#include "medfuse/model.hpp"

namespace medfuse {

struct EvalOptions {
  Index batch_size = 16;
  /// Augmentation geometry; evaluation always uses the deterministic
  /// resize + center-crop path.
  AugmentConfig augment;
  std::uint64_t seed = 0;
};

/// Deterministic eval-mode probabilities (N x L), batched in input order.
Tensor predict_scores(const Model& model, const std::vector<MultimodalInstance>& instances,
                      const EvalOptions& options);

/// Stage-matched probabilities: pretraining stages score their uni-modal
/// heads (the image stage over the 14 radiology labels), fine-tuning scores
/// the fusion architecture.
Tensor predict_stage_scores(const Model& model, Stage stage,
                            const std::vector<MultimodalInstance>& instances,
                            const EvalOptions& options);

/// Stacked task labels (N x L).
Tensor labels_tensor(const std::vector<MultimodalInstance>& instances, Task task);

/// Model-selection metric: task AUROC (macro mean over valid labels for the
/// multi-label task; radiology-label macro for the image stage). Returns 0.5
/// with a warning when the metric is undefined on the given instances.
Scalar validation_auroc(const Model& model, Stage stage,
                        const std::vector<MultimodalInstance>& instances,
                        const EvalOptions& options);

/// Full test-set report: point estimates, bootstrap intervals, and per-label
/// table for the multi-label task.
MetricsReport evaluate_task(const Model& model, const std::vector<MultimodalInstance>& instances,
                            const EvalOptions& options, Index n_iter = kBootstrapIterations,
                            std::uint64_t seed = 0);

enum class SubgroupScheme { age_bands, phenotype_category };

/// Per-group metrics: age bands [18-40), [40-60), [60-80), >= 80 over
/// instances for the binary task, or acute/mixed/chronic means over the
/// per-label table for the multi-label task. Empty groups are omitted with a
/// notice.
MetricsReport subgroup_report(const std::vector<MultimodalInstance>& instances,
                              const Tensor& predictions, SubgroupScheme scheme, Task task);

/// Routes paired instances to the fusion model and image-missing ones to the
/// uni-modal model; outputs keep input order.
Tensor ensemble_predict(const Model& unimodal, const Model& fused,
                        const std::vector<MultimodalInstance>& instances,
                        const EvalOptions& options);

}  // namespace medfuse

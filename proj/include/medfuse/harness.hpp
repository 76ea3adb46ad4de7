#pragma once

#include "medfuse/svg.hpp"
#include "medfuse/training.hpp"

namespace medfuse {

/// One experiment: a model, its training regime, an evaluation set, and
/// optionally a sweep over the uni-modal sampling fraction or the test-time
/// image drop rate.
struct ExperimentSpec {
  std::string name = "experiment";
  Task task = Task::mortality;
  std::string model = "medfuse";  // lstm_uni | medfuse | early | joint | ensemble
  TrainSet train_set = TrainSet::partial;
  std::string eval_set = "paired";  // paired | partial
  std::vector<Scalar> unimodal_fraction_sweep;
  std::vector<Scalar> test_drop_rate_sweep;
  MissingVectorMode missing_vector_mode = MissingVectorMode::learnable;
  Index n_lr_runs = 10;
  std::uint64_t seed = 0;
  std::string encoder_init = "pretrained";  // pretrained | random
  /// Base training knobs (epochs, batch size, patience, ...).
  TrainConfig train;
  /// Optional desk-scale overrides of the image encoder stack.
  std::vector<Index> cxr_stage_widths;
  Index cxr_blocks_per_stage = 0;  // 0 keeps the default

  bool uses_images() const { return model != "lstm_uni"; }
};

nlohmann::ordered_json experiment_spec_to_json(const ExperimentSpec& spec);
ExperimentSpec experiment_spec_from_json(const nlohmann::ordered_json& j);
ExperimentSpec load_experiment_spec(const std::string& path);
/// Rejects invalid model/set/sweep combinations before any training.
void validate_spec(const ExperimentSpec& spec);

/// Test-time modality dropping: each paired instance loses its image with
/// probability `rate` (seeded).
std::vector<MultimodalInstance> drop_images(const std::vector<MultimodalInstance>& instances,
                                            Scalar rate, std::uint64_t seed);

nlohmann::ordered_json report_to_json(const MetricsReport& report);
/// Per-label table in column order phenotype,type,prevalence,auroc,auprc,
/// or a metric/value table for single-label reports.
std::string report_to_csv(const MetricsReport& report);

struct SubRunResult {
  Scalar sweep_value = 0.0;
  bool has_sweep_value = false;
  Scalar best_lr = 0.0;
  Scalar val_auroc = 0.0;
  MetricsReport test_report;
  std::string directory;
};

struct ExperimentResult {
  std::string run_dir;
  std::vector<SubRunResult> sub_runs;
  int optimal_index = 0;  // best validation AUROC among sub-runs
};

ExperimentResult run_experiment(const ExperimentSpec& spec, const std::string& dataset_root,
                                const std::string& out_root);

struct ComparisonRow {
  std::string method;
  Scalar val_auroc = 0.0;
  MetricsReport report;
};

/// Runs every spec (shared task and eval set required) and writes a
/// comparison table (CSV + JSON + text summary with the best value per
/// metric column marked).
std::vector<ComparisonRow> compare_models(const std::vector<ExperimentSpec>& specs,
                                          const std::string& dataset_root,
                                          const std::string& out_root);

}  // namespace medfuse

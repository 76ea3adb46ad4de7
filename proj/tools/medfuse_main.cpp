// medfuse command-line interface: synthetic data generation, stage training,
// checkpoint evaluation, and config-driven experiments.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "medfuse/harness.hpp"

namespace fs = std::filesystem;
using namespace medfuse;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

ordered_json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw IoError("cannot parse " + path + ": " + e.what());
  }
  return j;
}

int cmd_gen_data(const std::string& task, Index subjects, Scalar missing_rate, Scalar signal,
                 std::uint64_t seed, const std::string& out, Index image_size, Scalar prevalence,
                 Index latent_dim, Scalar horizon) {
  SyntheticConfig config;
  config.task = task_from_name(task);
  config.n_subjects = subjects;
  config.missing_image_rate = missing_rate;
  config.cross_modal_signal = signal;
  config.seed = seed;
  config.image_resolution = image_size;
  config.prevalence = prevalence;
  config.latent_dim = latent_dim;
  config.horizon_hours = horizon;

  const VariableRegistry& registry = default_registry();
  const DatasetSplit split = generate_synthetic(config, registry);

  DatasetMeta meta;
  meta.task = config.task;
  meta.seed = seed;
  meta.registry_hash = registry.hash;
  meta.image_resolution = config.image_resolution;
  meta.source_resolution = synthetic_source_resolution(config.image_resolution);
  meta.horizon_hours = config.horizon_hours;
  meta.missing_image_rate = config.missing_image_rate;
  meta.cross_modal_signal = config.cross_modal_signal;
  meta.n_subjects = config.n_subjects;
  save_dataset(split, out, meta, default_registry_text());
  std::printf("wrote %zu/%zu/%zu train/val/test instances to %s\n", split.train.size(),
              split.val.size(), split.test.size(), out.c_str());
  return 0;
}

int cmd_train(const std::string& config_path) {
  const ordered_json j = load_json_file(config_path);
  const TrainConfig config = train_config_from_json(j);
  const std::string dataset_root = j.at("dataset").get<std::string>();
  const std::string out = j.at("out").get<std::string>();
  const ModelKind kind = model_kind_from_name(j.value("model", std::string("medfuse")));

  const DatasetMeta meta = load_dataset_meta(dataset_root);
  const VariableRegistry registry =
      validate_registry((fs::path(dataset_root) / "registry.txt").string());
  const DatasetSplit split = load_dataset(dataset_root);

  ModelConfig model_config;
  model_config.task = meta.task;
  model_config.kind = kind;
  model_config.missing_mode = config.missing_vector_mode;
  model_config.cxr.input_resolution = meta.image_resolution;
  if (j.contains("cxr_stage_widths")) {
    model_config.cxr.stage_widths = j.at("cxr_stage_widths").get<std::vector<Index>>();
  }
  if (j.contains("cxr_blocks_per_stage")) {
    model_config.cxr.blocks_per_stage = j.at("cxr_blocks_per_stage").get<Index>();
  }

  Rng init_rng(j.value("init_seed", config.seed));
  Model model = make_model(model_config, init_rng);
  if (j.contains("ehr_checkpoint")) {
    load_parameters(model, load_checkpoint(j.at("ehr_checkpoint").get<std::string>()), {"ehr."});
  }
  if (j.contains("cxr_checkpoint")) {
    load_parameters(model, load_checkpoint(j.at("cxr_checkpoint").get<std::string>()), {"cxr."});
  }
  if (kind == ModelKind::early_fusion && config.stage == Stage::finetune_fusion) {
    if (!j.contains("ehr_checkpoint") || !j.contains("cxr_checkpoint")) {
      throw ValidationError("early fusion freezes its encoders, so fine-tuning requires "
                            "ehr_checkpoint and cxr_checkpoint");
    }
    freeze_encoders(model);
  }
  if (config.stage == Stage::finetune_fusion && config.pretrained_init &&
      kind == ModelKind::medfuse && !j.contains("ehr_checkpoint")) {
    throw ValidationError(
        "fine-tuning with pretrained_init requires ehr_checkpoint/cxr_checkpoint "
        "(set pretrained_init=false for random initialization)");
  }

  const StageResult result = run_stage(config, model, split, registry.hash);
  save_checkpoint(result.best, out);
  std::printf("stage %s: %lld epochs, best val AUROC %.4f at epoch %lld -> %s\n",
              stage_name(config.stage).c_str(), static_cast<long long>(result.epochs_run),
              result.best.best_val_auroc, static_cast<long long>(result.best_epoch), out.c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& dataset_root,
             const std::string& split_name, const std::string& eval_set,
             const std::string& out_prefix) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  Model model = model_from_checkpoint(ckpt);
  const DatasetMeta meta = load_dataset_meta(dataset_root);
  const std::string ckpt_hash = checkpoint_registry_hash(ckpt);
  if (!ckpt_hash.empty() && ckpt_hash != meta.registry_hash) {
    throw ValidationError("registry hash mismatch: checkpoint " + ckpt_hash + " vs dataset " +
                          meta.registry_hash);
  }
  if (model.config.task != meta.task) {
    throw ValidationError("checkpoint task " + task_name(model.config.task) +
                          " does not match dataset task " + task_name(meta.task));
  }
  std::vector<MultimodalInstance> instances = load_split_records(dataset_root, split_name);
  if (eval_set == "paired") {
    std::vector<MultimodalInstance> paired;
    for (const MultimodalInstance& inst : instances) {
      if (inst.is_paired) paired.push_back(inst);
    }
    instances = std::move(paired);
  } else if (eval_set != "partial") {
    throw ValidationError("--eval-set must be paired or partial");
  }
  if (instances.empty()) throw ValidationError("evaluation set is empty");

  EvalOptions options;
  options.augment = scaled_augment_config(meta.image_resolution);
  const MetricsReport report = evaluate_task(model, instances, options);
  const ordered_json j = report_to_json(report);
  if (out_prefix.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::ofstream json_out(out_prefix + ".json");
    if (!json_out) throw IoError("cannot write " + out_prefix + ".json");
    json_out << j.dump(2) << "\n";
    std::ofstream csv_out(out_prefix + ".csv");
    if (!csv_out) throw IoError("cannot write " + out_prefix + ".csv");
    csv_out << report_to_csv(report);
    std::printf("wrote %s.json and %s.csv\n", out_prefix.c_str(), out_prefix.c_str());
  }
  std::printf("auroc %.4f (%.4f, %.4f)  auprc %.4f (%.4f, %.4f)  n=%lld\n", report.auroc,
              report.auroc_ci.first, report.auroc_ci.second, report.auprc,
              report.auprc_ci.first, report.auprc_ci.second,
              static_cast<long long>(report.n_instances));
  return 0;
}

int cmd_experiment(const std::string& spec_path, const std::string& dataset_root,
                   const std::string& out_root) {
  const ExperimentSpec spec = load_experiment_spec(spec_path);
  const ExperimentResult result = run_experiment(spec, dataset_root, out_root);
  const SubRunResult& best = result.sub_runs[static_cast<std::size_t>(result.optimal_index)];
  std::printf("experiment '%s': %zu sub-run(s) under %s\n", spec.name.c_str(),
              result.sub_runs.size(), result.run_dir.c_str());
  if (best.has_sweep_value) {
    std::printf("OPTIMAL sweep value %.3g (val AUROC %.4f)\n", best.sweep_value, best.val_auroc);
  }
  std::printf("test auroc %.4f (%.4f, %.4f)  auprc %.4f (%.4f, %.4f)\n", best.test_report.auroc,
              best.test_report.auroc_ci.first, best.test_report.auroc_ci.second,
              best.test_report.auprc, best.test_report.auprc_ci.first,
              best.test_report.auprc_ci.second);
  return 0;
}

int cmd_compare(const std::vector<std::string>& spec_paths, const std::string& dataset_root,
                const std::string& out_root) {
  std::vector<ExperimentSpec> specs;
  for (const std::string& path : spec_paths) specs.push_back(load_experiment_spec(path));
  const std::vector<ComparisonRow> rows = compare_models(specs, dataset_root, out_root);
  for (const ComparisonRow& row : rows) {
    std::printf("%-24s auroc %.4f (%.4f, %.4f)  auprc %.4f (%.4f, %.4f)\n", row.method.c_str(),
                row.report.auroc, row.report.auroc_ci.first, row.report.auroc_ci.second,
                row.report.auprc, row.report.auprc_ci.first, row.report.auprc_ci.second);
  }
  std::printf("comparison table under %s/comparison\n", out_root.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partially-paired clinical multimodal fusion benchmark"};
  app.require_subcommand(1);

  // gen-data
  std::string gd_task = "mortality", gd_out;
  Index gd_subjects = 200, gd_image_size = 32, gd_latent = 6;
  Scalar gd_missing = 0.3, gd_signal = 0.8, gd_prevalence = 0.35, gd_horizon = 48.0;
  std::uint64_t gd_seed = 0;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic partially-paired dataset");
  gen->add_option("--task", gd_task, "mortality or phenotyping");
  gen->add_option("--subjects", gd_subjects, "number of subjects (>= 30)");
  gen->add_option("--missing-rate", gd_missing, "probability an image is missing");
  gen->add_option("--signal", gd_signal, "cross-modal signal weight in [0, 1]");
  gen->add_option("--seed", gd_seed, "generator seed");
  gen->add_option("--out", gd_out, "output dataset directory")->required();
  gen->add_option("--image-size", gd_image_size, "encoder crop resolution");
  gen->add_option("--prevalence", gd_prevalence, "positive rate (mortality)");
  gen->add_option("--latent-dim", gd_latent, "latent factor dimension");
  gen->add_option("--horizon", gd_horizon, "record horizon in hours");

  // train
  std::string tr_config;
  auto* train = app.add_subcommand("train", "Run one training stage from a JSON config");
  train->add_option("--config", tr_config, "training config JSON")->required();

  // eval
  std::string ev_checkpoint, ev_data, ev_split = "test", ev_eval_set = "partial", ev_out;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval->add_option("--checkpoint", ev_checkpoint, "checkpoint file")->required();
  eval->add_option("--data", ev_data, "dataset directory")->required();
  eval->add_option("--split", ev_split, "train, val or test");
  eval->add_option("--eval-set", ev_eval_set, "paired or partial");
  eval->add_option("--out", ev_out, "output report prefix (writes .json and .csv)");

  // experiment
  std::string ex_spec, ex_data, ex_out = "runs";
  auto* experiment = app.add_subcommand("experiment", "Run a config-driven experiment");
  experiment->add_option("--spec", ex_spec, "experiment spec JSON")->required();
  experiment->add_option("--data", ex_data, "dataset directory")->required();
  experiment->add_option("--out", ex_out, "output root for run directories");

  // compare
  std::vector<std::string> cp_specs;
  std::string cp_data, cp_out = "runs";
  auto* compare = app.add_subcommand("compare", "Run several specs and tabulate them");
  compare->add_option("--specs", cp_specs, "experiment spec JSON files")->required();
  compare->add_option("--data", cp_data, "dataset directory")->required();
  compare->add_option("--out", cp_out, "output root");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_gen_data(gd_task, gd_subjects, gd_missing, gd_signal, gd_seed, gd_out,
                          gd_image_size, gd_prevalence, gd_latent, gd_horizon);
    }
    if (train->parsed()) return cmd_train(tr_config);
    if (eval->parsed()) return cmd_eval(ev_checkpoint, ev_data, ev_split, ev_eval_set, ev_out);
    if (experiment->parsed()) return cmd_experiment(ex_spec, ex_data, ex_out);
    if (compare->parsed()) return cmd_compare(cp_specs, cp_data, cp_out);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return kExitValidation;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return kExitDivergence;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

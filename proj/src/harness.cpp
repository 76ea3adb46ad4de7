#include "medfuse/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace medfuse {

using ordered_json = nlohmann::ordered_json;

ordered_json experiment_spec_to_json(const ExperimentSpec& spec) {
  ordered_json j;
  j["name"] = spec.name;
  j["task"] = task_name(spec.task);
  j["model"] = spec.model;
  j["train_set"] = train_set_name(spec.train_set);
  j["eval_set"] = spec.eval_set;
  if (!spec.unimodal_fraction_sweep.empty()) {
    j["unimodal_fraction_sweep"] = spec.unimodal_fraction_sweep;
  }
  if (!spec.test_drop_rate_sweep.empty()) j["test_drop_rate_sweep"] = spec.test_drop_rate_sweep;
  j["missing_vector_mode"] = missing_mode_name(spec.missing_vector_mode);
  j["n_lr_runs"] = spec.n_lr_runs;
  j["seed"] = spec.seed;
  j["encoder_init"] = spec.encoder_init;
  j["train"] = train_config_to_json(spec.train);
  if (!spec.cxr_stage_widths.empty()) j["cxr_stage_widths"] = spec.cxr_stage_widths;
  if (spec.cxr_blocks_per_stage > 0) j["cxr_blocks_per_stage"] = spec.cxr_blocks_per_stage;
  return j;
}

ExperimentSpec experiment_spec_from_json(const ordered_json& j) {
  ExperimentSpec spec;
  if (j.contains("name")) spec.name = j.at("name").get<std::string>();
  if (j.contains("task")) spec.task = task_from_name(j.at("task").get<std::string>());
  if (j.contains("model")) spec.model = j.at("model").get<std::string>();
  if (j.contains("train_set")) spec.train_set = train_set_from_name(j.at("train_set").get<std::string>());
  if (j.contains("eval_set")) spec.eval_set = j.at("eval_set").get<std::string>();
  if (j.contains("unimodal_fraction_sweep")) {
    spec.unimodal_fraction_sweep = j.at("unimodal_fraction_sweep").get<std::vector<Scalar>>();
  }
  if (j.contains("test_drop_rate_sweep")) {
    spec.test_drop_rate_sweep = j.at("test_drop_rate_sweep").get<std::vector<Scalar>>();
  }
  if (j.contains("missing_vector_mode")) {
    spec.missing_vector_mode = missing_mode_from_name(j.at("missing_vector_mode").get<std::string>());
  }
  if (j.contains("n_lr_runs")) spec.n_lr_runs = j.at("n_lr_runs").get<Index>();
  if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("encoder_init")) spec.encoder_init = j.at("encoder_init").get<std::string>();
  if (j.contains("train")) spec.train = train_config_from_json(j.at("train"));
  if (j.contains("cxr_stage_widths")) {
    spec.cxr_stage_widths = j.at("cxr_stage_widths").get<std::vector<Index>>();
  }
  if (j.contains("cxr_blocks_per_stage")) {
    spec.cxr_blocks_per_stage = j.at("cxr_blocks_per_stage").get<Index>();
  }
  return spec;
}

ExperimentSpec load_experiment_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open experiment spec: " + path);
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw IoError("cannot parse experiment spec " + path + ": " + e.what());
  }
  return experiment_spec_from_json(j);
}

void validate_spec(const ExperimentSpec& spec) {
  static const std::set<std::string> kModels = {"lstm_uni", "medfuse", "early", "joint",
                                                "ensemble"};
  if (kModels.count(spec.model) == 0) {
    throw ValidationError("spec: unknown model '" + spec.model + "'");
  }
  if (spec.eval_set != "paired" && spec.eval_set != "partial") {
    throw ValidationError("spec: eval_set must be paired or partial, got '" + spec.eval_set + "'");
  }
  if (spec.encoder_init != "pretrained" && spec.encoder_init != "random") {
    throw ValidationError("spec: encoder_init must be pretrained or random");
  }
  if (spec.n_lr_runs < 1) throw ValidationError("spec: n_lr_runs must be >= 1");
  for (Scalar v : spec.unimodal_fraction_sweep) {
    if (v < 0.0 || v > 1.0) throw ValidationError("spec: sweep values must lie in [0, 1]");
  }
  for (Scalar v : spec.test_drop_rate_sweep) {
    if (v < 0.0 || v > 1.0) throw ValidationError("spec: sweep values must lie in [0, 1]");
  }
  if (!spec.unimodal_fraction_sweep.empty() && !spec.test_drop_rate_sweep.empty()) {
    throw ValidationError("spec: choose one sweep axis, not both");
  }
  if (!spec.unimodal_fraction_sweep.empty()) {
    if (spec.model == "lstm_uni") {
      throw ValidationError("spec: lstm_uni has no uni-modal sampling fraction to sweep");
    }
    if (spec.train_set != TrainSet::partial) {
      throw ValidationError("spec: unimodal_fraction_sweep requires train_set = partial");
    }
  }
  if (!spec.test_drop_rate_sweep.empty()) {
    if (!spec.uses_images()) {
      throw ValidationError("spec: test_drop_rate_sweep needs a model that uses images");
    }
    if (spec.eval_set != "paired") {
      throw ValidationError("spec: test_drop_rate_sweep drops images from the paired test set");
    }
  }
}

std::vector<MultimodalInstance> drop_images(const std::vector<MultimodalInstance>& instances,
                                            Scalar rate, std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) throw ValidationError("drop rate must lie in [0, 1]");
  Rng rng(seed);
  std::vector<MultimodalInstance> out = instances;
  for (MultimodalInstance& inst : out) {
    if (inst.is_paired && rng.uniform() < rate) {
      inst.x_cxr = Tensor();
      inst.y_cxr = Tensor();
      inst.is_paired = false;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

ordered_json report_to_json(const MetricsReport& report) {
  ordered_json j;
  j["auroc"] = report.auroc;
  j["auroc_ci"] = {report.auroc_ci.first, report.auroc_ci.second};
  j["auprc"] = report.auprc;
  j["auprc_ci"] = {report.auprc_ci.first, report.auprc_ci.second};
  j["n_instances"] = report.n_instances;
  j["n_positive"] = report.n_positive;
  j["labels_skipped"] = report.labels_skipped;
  j["bootstrap_skipped"] = report.bootstrap_skipped;
  j["reliability_warning"] = report.reliability_warning;
  if (!report.per_label.empty()) {
    ordered_json rows = ordered_json::array();
    for (const LabelMetrics& lm : report.per_label) {
      ordered_json row;
      row["phenotype"] = lm.name;
      row["type"] = lm.type;
      row["prevalence"] = lm.prevalence;
      row["auroc"] = lm.valid ? ordered_json(lm.auroc) : ordered_json(nullptr);
      row["auprc"] = lm.valid ? ordered_json(lm.auprc) : ordered_json(nullptr);
      rows.push_back(row);
    }
    j["per_label"] = rows;
  }
  if (!report.subgroups.empty()) {
    ordered_json rows = ordered_json::array();
    for (const GroupMetrics& gm : report.subgroups) {
      ordered_json row;
      row["group"] = gm.key;
      row["n"] = gm.n;
      row["n_positive"] = gm.n_positive;
      row["positive_fraction"] = gm.positive_fraction;
      row["auroc"] = gm.auroc;
      row["auprc"] = gm.auprc;
      rows.push_back(row);
    }
    j["subgroups"] = rows;
  }
  if (!report.notices.empty()) j["notices"] = report.notices;
  return j;
}

std::string report_to_csv(const MetricsReport& report) {
  std::ostringstream out;
  char line[256];
  if (!report.per_label.empty()) {
    out << "phenotype,type,prevalence,auroc,auprc\n";
    for (const LabelMetrics& lm : report.per_label) {
      if (lm.valid) {
        std::snprintf(line, sizeof(line), ",%.6f,%.6f,%.6f\n", lm.prevalence, lm.auroc, lm.auprc);
        out << lm.name << "," << lm.type << line;
      } else {
        std::snprintf(line, sizeof(line), ",%.6f,,\n", lm.prevalence);
        out << lm.name << "," << lm.type << line;
      }
    }
    std::snprintf(line, sizeof(line), "Average,all,,%.6f,%.6f\n", report.auroc, report.auprc);
    out << line;
  } else {
    out << "metric,value,ci_low,ci_high\n";
    std::snprintf(line, sizeof(line), "auroc,%.6f,%.6f,%.6f\n", report.auroc,
                  report.auroc_ci.first, report.auroc_ci.second);
    out << line;
    std::snprintf(line, sizeof(line), "auprc,%.6f,%.6f,%.6f\n", report.auprc,
                  report.auprc_ci.first, report.auprc_ci.second);
    out << line;
  }
  if (!report.subgroups.empty()) {
    out << "group,n,n_positive,positive_fraction,auroc,auprc\n";
    for (const GroupMetrics& gm : report.subgroups) {
      std::snprintf(line, sizeof(line), ",%lld,%lld,%.6f,%.6f,%.6f\n",
                    static_cast<long long>(gm.n), static_cast<long long>(gm.n_positive),
                    gm.positive_fraction, gm.auroc, gm.auprc);
      out << gm.key << line;
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void write_json(const fs::path& path, const ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

std::string timestamp_string() {
  const std::time_t now = std::time(nullptr);
  std::tm tm_buf{};
  localtime_r(&now, &tm_buf);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm_buf);
  return buf;
}

std::vector<MultimodalInstance> filter_eval_set(const std::vector<MultimodalInstance>& instances,
                                                const std::string& eval_set) {
  if (eval_set == "partial") return instances;
  std::vector<MultimodalInstance> out;
  for (const MultimodalInstance& inst : instances) {
    if (inst.is_paired) out.push_back(inst);
  }
  if (out.empty()) throw ValidationError("paired evaluation set is empty");
  return out;
}

ModelConfig base_model_config(const ExperimentSpec& spec, const DatasetMeta& meta,
                              ModelKind kind) {
  ModelConfig config;
  config.task = spec.task;
  config.kind = kind;
  config.missing_mode = spec.missing_vector_mode;
  config.cxr.input_resolution = meta.image_resolution;
  if (!spec.cxr_stage_widths.empty()) config.cxr.stage_widths = spec.cxr_stage_widths;
  if (spec.cxr_blocks_per_stage > 0) config.cxr.blocks_per_stage = spec.cxr_blocks_per_stage;
  return config;
}

TrainConfig stage_config(const ExperimentSpec& spec, Stage stage, std::uint64_t salt) {
  TrainConfig tc = spec.train;
  tc.stage = stage;
  tc.train_set = spec.train_set;
  tc.missing_vector_mode = spec.missing_vector_mode;
  tc.seed = Rng(spec.seed).derive(salt).seed();
  return tc;
}

struct PipelineOutput {
  Checkpoint final_model;
  std::optional<Checkpoint> unimodal;  // ensemble companion
  Scalar best_lr = 0.0;
  Scalar val_auroc = 0.0;
  std::vector<LrRun> lr_runs;
  std::vector<Index> final_train_ids;  // instance ids used by the last stage
};

std::vector<Index> used_instance_ids(const std::vector<MultimodalInstance>& instances,
                                     const std::vector<Index>& indices) {
  std::vector<Index> ids;
  ids.reserve(indices.size());
  for (Index i : indices) {
    ids.push_back(static_cast<Index>(instances[static_cast<std::size_t>(i)].instance_id));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Pretrains the encoders of `model` in place (image stage skipped for
// image-free kinds), returns checkpoints for reuse.
std::pair<Checkpoint, std::optional<Checkpoint>> pretrain_encoders(
    const ExperimentSpec& spec, Model& model, const DatasetSplit& split,
    const std::string& registry_hash) {
  TrainConfig ehr_tc = stage_config(spec, Stage::pretrain_ehr, 0xE41ULL);
  const StageResult ehr = run_stage(ehr_tc, model, split, registry_hash);
  std::optional<Checkpoint> cxr;
  if (model.cxr) {
    TrainConfig cxr_tc = stage_config(spec, Stage::pretrain_cxr, 0xC4A2ULL);
    cxr = run_stage(cxr_tc, model, split, registry_hash).best;
  }
  return {ehr.best, cxr};
}

PipelineOutput train_unimodal(const ExperimentSpec& spec, const DatasetMeta& meta,
                              const DatasetSplit& split, const std::string& registry_hash) {
  PipelineOutput out;
  TrainConfig tc = stage_config(spec, Stage::pretrain_ehr, 0xE41ULL);
  Rng search_rng = Rng(spec.seed).derive(0x5EA7C4ULL);
  const ModelConfig config = base_model_config(spec, meta, ModelKind::lstm_uni);
  LrSearchResult search = search_learning_rate(
      spec.n_lr_runs, search_rng, tc, split, registry_hash,
      [&](std::uint64_t seed) {
        Rng rng(seed);
        return make_model(config, rng);
      });
  out.final_model = std::move(search.best);
  out.best_lr = search.best_lr;
  out.val_auroc = out.final_model.best_val_auroc;
  out.lr_runs = std::move(search.runs);
  out.final_train_ids =
      used_instance_ids(split.train, select_finetune_instances(split.train, spec.train_set, 1.0,
                                                               tc.seed));
  return out;
}

PipelineOutput train_fusion_kind(const ExperimentSpec& spec, const DatasetMeta& meta,
                                 const DatasetSplit& split, const std::string& registry_hash,
                                 ModelKind kind, std::optional<Scalar> fraction_override,
                                 std::optional<Scalar> fixed_lr) {
  const ModelConfig config = base_model_config(spec, meta, kind);
  const bool pretrained = kind == ModelKind::joint_fusion ? false : spec.encoder_init == "pretrained";

  std::optional<Checkpoint> ehr_ckpt, cxr_ckpt;
  if (pretrained || kind == ModelKind::early_fusion) {
    // Early fusion always pretrains: its encoders stay frozen afterwards.
    Rng init_rng = Rng(spec.seed).derive(0x171ULL);
    Model pretrain_model = make_model(config, init_rng);
    auto [ehr, cxr] = pretrain_encoders(spec, pretrain_model, split, registry_hash);
    ehr_ckpt = std::move(ehr);
    cxr_ckpt = std::move(cxr);
  }

  auto factory = [&](std::uint64_t seed) {
    Rng rng(seed);
    Model model = make_model(config, rng);
    if (ehr_ckpt) {
      load_parameters(model, *ehr_ckpt, {"ehr."});
      if (cxr_ckpt) load_parameters(model, *cxr_ckpt, {"cxr."});
    }
    if (kind == ModelKind::early_fusion) freeze_encoders(model);
    return model;
  };

  TrainConfig tc = stage_config(spec, Stage::finetune_fusion, 0xF7ULL);
  tc.pretrained_init = pretrained;
  if (fraction_override) tc.unimodal_fraction = *fraction_override;

  PipelineOutput out;
  if (fixed_lr) {
    tc.learning_rate = *fixed_lr;
    Model model = factory(Rng(spec.seed).derive(0xF1DELL).seed());
    const StageResult stage = run_stage(tc, model, split, registry_hash);
    out.final_model = stage.best;
    out.best_lr = *fixed_lr;
    out.val_auroc = stage.best.best_val_auroc;
  } else {
    Rng search_rng = Rng(spec.seed).derive(0x5EA7C4ULL);
    LrSearchResult search =
        search_learning_rate(spec.n_lr_runs, search_rng, tc, split, registry_hash, factory);
    out.final_model = std::move(search.best);
    out.best_lr = search.best_lr;
    out.val_auroc = out.final_model.best_val_auroc;
    out.lr_runs = std::move(search.runs);
  }
  out.final_train_ids = used_instance_ids(
      split.train,
      select_finetune_instances(split.train, tc.train_set, tc.unimodal_fraction, tc.seed));
  return out;
}

PipelineOutput train_pipeline(const ExperimentSpec& spec, const DatasetMeta& meta,
                              const DatasetSplit& split, const std::string& registry_hash,
                              std::optional<Scalar> fraction_override,
                              std::optional<Scalar> fixed_lr) {
  if (spec.model == "lstm_uni") return train_unimodal(spec, meta, split, registry_hash);
  if (spec.model == "ensemble") {
    PipelineOutput fused = train_fusion_kind(spec, meta, split, registry_hash, ModelKind::medfuse,
                                             fraction_override, fixed_lr);
    ExperimentSpec uni_spec = spec;
    uni_spec.model = "lstm_uni";
    PipelineOutput uni = train_unimodal(uni_spec, meta, split, registry_hash);
    fused.unimodal = std::move(uni.final_model);
    return fused;
  }
  ModelKind kind = ModelKind::medfuse;
  if (spec.model == "early") kind = ModelKind::early_fusion;
  else if (spec.model == "joint") kind = ModelKind::joint_fusion;
  return train_fusion_kind(spec, meta, split, registry_hash, kind, fraction_override, fixed_lr);
}

MetricsReport evaluate_pipeline(const ExperimentSpec& spec, const PipelineOutput& pipeline,
                                const std::vector<MultimodalInstance>& eval_instances,
                                const DatasetMeta& meta) {
  EvalOptions options;
  options.batch_size = spec.train.batch_size;
  options.augment = scaled_augment_config(meta.image_resolution);

  Model model = model_from_checkpoint(pipeline.final_model);
  MetricsReport report;
  if (spec.model == "ensemble") {
    Model uni = model_from_checkpoint(*pipeline.unimodal);
    const Tensor scores = ensemble_predict(uni, model, eval_instances, options);
    const Tensor labels = labels_tensor(eval_instances, spec.task);
    if (spec.task == Task::mortality) {
      std::vector<Scalar> s(static_cast<std::size_t>(scores.rows()));
      std::vector<int> l(static_cast<std::size_t>(scores.rows()));
      for (Index i = 0; i < scores.rows(); ++i) {
        s[static_cast<std::size_t>(i)] = scores.at(i, 0);
        l[static_cast<std::size_t>(i)] = labels.at(i, 0) > 0.5 ? 1 : 0;
      }
      report = evaluate_binary(s, l, kBootstrapIterations, spec.seed);
    } else {
      std::vector<std::string> names, types;
      for (const PhenotypeLabel& pl : phenotype_labels()) {
        names.push_back(pl.name);
        types.push_back(pl.type);
      }
      report = macro_metrics(scores, labels, names, types, kBootstrapIterations, spec.seed);
    }
  } else {
    report = evaluate_task(model, eval_instances, options, kBootstrapIterations, spec.seed);
  }

  // Subgroup breakdowns when the metadata supports them.
  try {
    const Tensor scores = spec.model == "ensemble"
                              ? ensemble_predict(model_from_checkpoint(*pipeline.unimodal), model,
                                                 eval_instances, options)
                              : predict_scores(model, eval_instances, options);
    const SubgroupScheme scheme = spec.task == Task::mortality ? SubgroupScheme::age_bands
                                                               : SubgroupScheme::phenotype_category;
    const MetricsReport groups = subgroup_report(eval_instances, scores, scheme, spec.task);
    report.subgroups = groups.subgroups;
    for (const std::string& notice : groups.notices) report.notices.push_back(notice);
  } catch (const ValidationError& e) {
    report.notices.push_back(std::string("subgroup report unavailable: ") + e.what());
  }
  return report;
}

void write_audit(const fs::path& dir, const DatasetSplit& split,
                 const std::vector<Index>& train_ids_used) {
  auto ids_of = [](const std::vector<MultimodalInstance>& instances) {
    std::vector<Index> ids;
    ids.reserve(instances.size());
    for (const MultimodalInstance& inst : instances) {
      ids.push_back(static_cast<Index>(inst.instance_id));
    }
    std::sort(ids.begin(), ids.end());
    return ids;
  };
  const std::vector<Index> train_ids = ids_of(split.train);
  const std::vector<Index> val_ids = ids_of(split.val);
  const std::vector<Index> test_ids = ids_of(split.test);
  auto overlap = [](const std::vector<Index>& a, const std::vector<Index>& b) {
    std::vector<Index> out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
  };
  const std::vector<Index> tv = overlap(train_ids_used, val_ids);
  const std::vector<Index> tt = overlap(train_ids_used, test_ids);
  if (!tv.empty() || !tt.empty()) {
    throw ContractError("training instances leaked into validation or test");
  }
  ordered_json j;
  j["train_instance_ids_used"] = train_ids_used;
  j["train_instance_ids"] = train_ids;
  j["val_instance_ids"] = val_ids;
  j["test_instance_ids"] = test_ids;
  j["train_val_overlap"] = tv.size();
  j["train_test_overlap"] = tt.size();
  j["disjoint"] = true;
  write_json(dir / "audit.json", j);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec, const std::string& dataset_root,
                                const std::string& out_root) {
  validate_spec(spec);
  const DatasetMeta meta = load_dataset_meta(dataset_root);
  if (meta.task != spec.task) {
    throw ValidationError("dataset at " + dataset_root + " holds task " + task_name(meta.task) +
                          ", spec expects " + task_name(spec.task));
  }
  const VariableRegistry registry =
      validate_registry((fs::path(dataset_root) / "registry.txt").string());
  if (registry.hash != meta.registry_hash) {
    throw ValidationError("dataset registry hash mismatch: metadata says " + meta.registry_hash +
                          ", file hashes to " + registry.hash);
  }
  const DatasetSplit split = load_dataset(dataset_root);
  const std::vector<MultimodalInstance> eval_instances =
      filter_eval_set(split.test, spec.eval_set);

  const fs::path experiment_dir = fs::path(out_root) / spec.name;
  const std::string run_name = timestamp_string() + "-" + std::to_string(spec.seed);
  const fs::path run_dir = experiment_dir / run_name;
  fs::create_directories(run_dir);
  write_text(experiment_dir / "latest", run_name + "\n");

  ExperimentResult result;
  result.run_dir = run_dir.string();

  auto write_sub_run = [&](const fs::path& dir, const PipelineOutput& pipeline,
                           const MetricsReport& report, std::optional<Scalar> sweep_value,
                           const char* sweep_key) {
    fs::create_directories(dir);
    ordered_json config;
    config["spec"] = experiment_spec_to_json(spec);
    config["best_lr"] = pipeline.best_lr;
    if (sweep_value) config[sweep_key] = *sweep_value;
    write_json(dir / "config.json", config);
    save_checkpoint(pipeline.final_model, (dir / "model.mfck").string());
    if (pipeline.unimodal) {
      save_checkpoint(*pipeline.unimodal, (dir / "unimodal.mfck").string());
    }
    ordered_json mj;
    if (sweep_value) mj[sweep_key] = *sweep_value;
    mj["best_lr"] = pipeline.best_lr;
    mj["val_auroc"] = pipeline.val_auroc;
    mj["test"] = report_to_json(report);
    write_json(dir / "metrics.json", mj);
    write_text(dir / "metrics.csv", report_to_csv(report));
    write_audit(dir, split, pipeline.final_train_ids);
  };

  if (!spec.unimodal_fraction_sweep.empty()) {
    // The learning rate is tuned once at the base fraction, then each sweep
    // value fine-tunes with it.
    const PipelineOutput search_run =
        train_pipeline(spec, meta, split, registry.hash, std::nullopt, std::nullopt);
    for (std::size_t i = 0; i < spec.unimodal_fraction_sweep.size(); ++i) {
      const Scalar fraction = spec.unimodal_fraction_sweep[i];
      const PipelineOutput pipeline =
          train_pipeline(spec, meta, split, registry.hash, fraction, search_run.best_lr);
      const MetricsReport report = evaluate_pipeline(spec, pipeline, eval_instances, meta);
      const fs::path dir = run_dir / ("fraction-" + std::to_string(i));
      write_sub_run(dir, pipeline, report, fraction, "unimodal_fraction");
      SubRunResult sub;
      sub.sweep_value = fraction;
      sub.has_sweep_value = true;
      sub.best_lr = pipeline.best_lr;
      sub.val_auroc = pipeline.val_auroc;
      sub.test_report = report;
      sub.directory = dir.string();
      result.sub_runs.push_back(std::move(sub));
    }
  } else if (!spec.test_drop_rate_sweep.empty()) {
    const PipelineOutput pipeline =
        train_pipeline(spec, meta, split, registry.hash, std::nullopt, std::nullopt);
    for (std::size_t i = 0; i < spec.test_drop_rate_sweep.size(); ++i) {
      const Scalar rate = spec.test_drop_rate_sweep[i];
      const std::vector<MultimodalInstance> dropped =
          drop_images(eval_instances, rate, Rng(spec.seed).derive(0xD0B + i).seed());
      const MetricsReport report = evaluate_pipeline(spec, pipeline, dropped, meta);
      const fs::path dir = run_dir / ("drop-" + std::to_string(i));
      write_sub_run(dir, pipeline, report, rate, "test_drop_rate");
      SubRunResult sub;
      sub.sweep_value = rate;
      sub.has_sweep_value = true;
      sub.best_lr = pipeline.best_lr;
      sub.val_auroc = pipeline.val_auroc;
      sub.test_report = report;
      sub.directory = dir.string();
      result.sub_runs.push_back(std::move(sub));
    }
  } else {
    const PipelineOutput pipeline =
        train_pipeline(spec, meta, split, registry.hash, std::nullopt, std::nullopt);
    const MetricsReport report = evaluate_pipeline(spec, pipeline, eval_instances, meta);
    const fs::path dir = run_dir / "run";
    write_sub_run(dir, pipeline, report, std::nullopt, "");
    SubRunResult sub;
    sub.best_lr = pipeline.best_lr;
    sub.val_auroc = pipeline.val_auroc;
    sub.test_report = report;
    sub.directory = dir.string();
    result.sub_runs.push_back(std::move(sub));
  }

  // Selection rule: best validation AUROC across sub-runs.
  for (std::size_t i = 1; i < result.sub_runs.size(); ++i) {
    if (result.sub_runs[i].val_auroc >
        result.sub_runs[static_cast<std::size_t>(result.optimal_index)].val_auroc) {
      result.optimal_index = static_cast<int>(i);
    }
  }

  ordered_json summary;
  summary["experiment"] = spec.name;
  summary["model"] = spec.model;
  summary["optimal_index"] = result.optimal_index;
  if (result.sub_runs[static_cast<std::size_t>(result.optimal_index)].has_sweep_value) {
    summary["optimal_sweep_value"] =
        result.sub_runs[static_cast<std::size_t>(result.optimal_index)].sweep_value;
  }
  ordered_json rows = ordered_json::array();
  for (const SubRunResult& sub : result.sub_runs) {
    ordered_json row;
    if (sub.has_sweep_value) row["sweep_value"] = sub.sweep_value;
    row["val_auroc"] = sub.val_auroc;
    row["test_auroc"] = sub.test_report.auroc;
    row["test_auprc"] = sub.test_report.auprc;
    row["optimal"] = (&sub == &result.sub_runs[static_cast<std::size_t>(result.optimal_index)]);
    rows.push_back(row);
  }
  summary["sub_runs"] = rows;
  write_json(run_dir / "summary.json", summary);

  if (result.sub_runs.size() >= 2 && result.sub_runs.front().has_sweep_value) {
    SvgSeries val_series, test_series;
    val_series.label = "validation AUROC";
    test_series.label = "test AUROC";
    for (const SubRunResult& sub : result.sub_runs) {
      val_series.x.push_back(sub.sweep_value);
      val_series.y.push_back(sub.val_auroc);
      test_series.x.push_back(sub.sweep_value);
      test_series.y.push_back(sub.test_report.auroc);
      test_series.ci_low.push_back(sub.test_report.auroc_ci.first);
      test_series.ci_high.push_back(sub.test_report.auroc_ci.second);
    }
    SvgChartConfig chart;
    chart.title = spec.name;
    chart.x_label = spec.unimodal_fraction_sweep.empty() ? "test image drop rate"
                                                         : "uni-modal sampling fraction";
    chart.y_label = "AUROC";
    write_line_chart((run_dir / "plot.svg").string(), chart, {val_series, test_series});
  }
  return result;
}

std::vector<ComparisonRow> compare_models(const std::vector<ExperimentSpec>& specs,
                                          const std::string& dataset_root,
                                          const std::string& out_root) {
  if (specs.empty()) throw ValidationError("compare_models: no specs");
  for (const ExperimentSpec& spec : specs) {
    if (spec.task != specs.front().task || spec.eval_set != specs.front().eval_set) {
      throw ValidationError("compare_models: specs must share task and eval_set");
    }
  }
  std::vector<ComparisonRow> rows;
  for (const ExperimentSpec& spec : specs) {
    const ExperimentResult result = run_experiment(spec, dataset_root, out_root);
    const SubRunResult& best = result.sub_runs[static_cast<std::size_t>(result.optimal_index)];
    rows.push_back({spec.name, best.val_auroc, best.test_report});
  }

  const fs::path dir = fs::path(out_root) / "comparison";
  fs::create_directories(dir);
  std::ostringstream csv;
  csv << "method,auroc,auroc_ci,auprc,auprc_ci\n";
  char buf[160];
  for (const ComparisonRow& row : rows) {
    std::snprintf(buf, sizeof(buf), ",%.6f,\"(%.6f, %.6f)\",%.6f,\"(%.6f, %.6f)\"\n",
                  row.report.auroc, row.report.auroc_ci.first, row.report.auroc_ci.second,
                  row.report.auprc, row.report.auprc_ci.first, row.report.auprc_ci.second);
    csv << row.method << buf;
  }
  write_text(dir / "comparison.csv", csv.str());

  ordered_json j = ordered_json::array();
  for (const ComparisonRow& row : rows) {
    ordered_json r;
    r["method"] = row.method;
    r["val_auroc"] = row.val_auroc;
    r["test"] = report_to_json(row.report);
    j.push_back(r);
  }
  write_json(dir / "comparison.json", j);

  // Text summary with the best value per metric column marked.
  std::size_t best_roc = 0, best_pr = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].report.auroc > rows[best_roc].report.auroc) best_roc = i;
    if (rows[i].report.auprc > rows[best_pr].report.auprc) best_pr = i;
  }
  std::ostringstream text;
  text << "method | auroc | auprc\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%s | %s%.3f (%.3f, %.3f)%s | %s%.3f (%.3f, %.3f)%s\n",
                  rows[i].method.c_str(), i == best_roc ? "*" : "", rows[i].report.auroc,
                  rows[i].report.auroc_ci.first, rows[i].report.auroc_ci.second,
                  i == best_roc ? "*" : "", i == best_pr ? "*" : "", rows[i].report.auprc,
                  rows[i].report.auprc_ci.first, rows[i].report.auprc_ci.second,
                  i == best_pr ? "*" : "");
    text << buf;
  }
  write_text(dir / "summary.txt", text.str());
  return rows;
}

}  // namespace medfuse

#include "medfuse/evaluate.hpp"

#include <cstdio>

namespace medfuse {

namespace {

Tensor predict_with(const Model& model, Stage stage,
                    const std::vector<MultimodalInstance>& instances, const EvalOptions& options,
                    bool stage_specific) {
  if (instances.empty()) throw ValidationError("predict_scores: no instances");
  Rng rng(options.seed);
  const Index n = static_cast<Index>(instances.size());
  Tensor all;
  Index row = 0;
  for (Index start = 0; start < n; start += options.batch_size) {
    const Index count = std::min(options.batch_size, n - start);
    std::vector<Index> idx(static_cast<std::size_t>(count));
    for (Index i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    const Batch batch = make_batch(instances, idx, model.config.task, options.augment,
                                   AugmentMode::eval, rng);
    Tensor logits = stage_specific ? stage_logits(model, stage, batch, /*training=*/false, rng)
                                   : model_logits(model, batch, /*training=*/false, rng);
    Tensor probs = sigmoid(logits);
    if (!all.defined()) all = Tensor(Shape{n, probs.cols()});
    for (Index i = 0; i < probs.rows(); ++i) {
      all.matrix().row(row++) = probs.matrix().row(i);
    }
  }
  return all;
}

}  // namespace

Tensor predict_scores(const Model& model, const std::vector<MultimodalInstance>& instances,
                      const EvalOptions& options) {
  return predict_with(model, Stage::finetune_fusion, instances, options, /*stage_specific=*/false);
}

Tensor predict_stage_scores(const Model& model, Stage stage,
                            const std::vector<MultimodalInstance>& instances,
                            const EvalOptions& options) {
  return predict_with(model, stage, instances, options, /*stage_specific=*/true);
}

Tensor labels_tensor(const std::vector<MultimodalInstance>& instances, Task task) {
  const Index n = static_cast<Index>(instances.size());
  const Index l = label_count(task);
  Tensor out(Shape{n, l});
  for (Index i = 0; i < n; ++i) {
    const MultimodalInstance& inst = instances[static_cast<std::size_t>(i)];
    if (inst.y_task.numel() != l) {
      throw ValidationError("labels_tensor: instance " + std::to_string(inst.instance_id) +
                            " has " + std::to_string(inst.y_task.numel()) + " labels, expected " +
                            std::to_string(l));
    }
    out.matrix().row(i) = inst.y_task.matrix(1, l).row(0);
  }
  return out;
}

namespace {

std::vector<int> column_labels(const Tensor& labels, Index col) {
  std::vector<int> out(static_cast<std::size_t>(labels.rows()));
  for (Index i = 0; i < labels.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = labels.at(i, col) > 0.5 ? 1 : 0;
  }
  return out;
}

std::vector<Scalar> column_scores(const Tensor& scores, Index col) {
  std::vector<Scalar> out(static_cast<std::size_t>(scores.rows()));
  for (Index i = 0; i < scores.rows(); ++i) out[static_cast<std::size_t>(i)] = scores.at(i, col);
  return out;
}

// Macro AUROC over labels with both classes present; throws when none is.
Scalar macro_auroc_point(const Tensor& scores, const Tensor& labels) {
  Scalar total = 0.0;
  Index valid = 0;
  for (Index j = 0; j < scores.cols(); ++j) {
    try {
      total += auroc(column_scores(scores, j), column_labels(labels, j));
      ++valid;
    } catch (const UndefinedMetricError&) {
    }
  }
  if (valid == 0) throw UndefinedMetricError("macro AUROC undefined: all labels single-class");
  return total / static_cast<Scalar>(valid);
}

Tensor cxr_labels_tensor(const std::vector<MultimodalInstance>& instances) {
  const Index n = static_cast<Index>(instances.size());
  Tensor out(Shape{n, kCxrLabelCount});
  for (Index i = 0; i < n; ++i) {
    const MultimodalInstance& inst = instances[static_cast<std::size_t>(i)];
    if (!inst.y_cxr.defined()) {
      throw ValidationError("radiology labels missing on instance " +
                            std::to_string(inst.instance_id));
    }
    out.matrix().row(i) = inst.y_cxr.matrix(1, kCxrLabelCount).row(0);
  }
  return out;
}

}  // namespace

Scalar validation_auroc(const Model& model, Stage stage,
                        const std::vector<MultimodalInstance>& instances,
                        const EvalOptions& options) {
  const Tensor scores = predict_stage_scores(model, stage, instances, options);
  Tensor labels = stage == Stage::pretrain_cxr ? cxr_labels_tensor(instances)
                                               : labels_tensor(instances, model.config.task);
  try {
    if (scores.cols() == 1) {
      return auroc(column_scores(scores, 0), column_labels(labels, 0));
    }
    return macro_auroc_point(scores, labels);
  } catch (const UndefinedMetricError& e) {
    std::fprintf(stderr, "validation_auroc: %s; reporting 0.5\n", e.what());
    return 0.5;
  }
}

MetricsReport evaluate_task(const Model& model, const std::vector<MultimodalInstance>& instances,
                            const EvalOptions& options, Index n_iter, std::uint64_t seed) {
  const Tensor scores = predict_scores(model, instances, options);
  const Tensor labels = labels_tensor(instances, model.config.task);
  if (model.config.task == Task::mortality) {
    return evaluate_binary(column_scores(scores, 0), column_labels(labels, 0), n_iter, seed);
  }
  std::vector<std::string> names, types;
  for (const PhenotypeLabel& l : phenotype_labels()) {
    names.push_back(l.name);
    types.push_back(l.type);
  }
  return macro_metrics(scores, labels, names, types, n_iter, seed);
}

MetricsReport subgroup_report(const std::vector<MultimodalInstance>& instances,
                              const Tensor& predictions, SubgroupScheme scheme, Task task) {
  MetricsReport report;
  report.n_instances = static_cast<Index>(instances.size());
  if (scheme == SubgroupScheme::age_bands) {
    if (label_count(task) != 1 || predictions.cols() != 1) {
      throw ValidationError("age-band subgroup report needs single-label predictions");
    }
    struct Band {
      const char* key;
      Scalar lo, hi;
    };
    const Band bands[] = {{"18-40", 18.0, 40.0},
                          {"40-60", 40.0, 60.0},
                          {"60-80", 60.0, 80.0},
                          {">80", 80.0, 1e9}};
    for (const Band& band : bands) {
      std::vector<Scalar> scores;
      std::vector<int> labels;
      for (std::size_t i = 0; i < instances.size(); ++i) {
        if (!instances[i].age) {
          throw ValidationError("age missing on instance " +
                                std::to_string(instances[i].instance_id));
        }
        const Scalar age = *instances[i].age;
        if (age >= band.lo && age < band.hi) {
          scores.push_back(predictions.at(static_cast<Index>(i), 0));
          labels.push_back(instances[i].y_task.data()[0] > 0.5 ? 1 : 0);
        }
      }
      if (scores.empty()) {
        report.notices.push_back(std::string("age band ") + band.key + " empty; omitted");
        continue;
      }
      GroupMetrics gm;
      gm.key = band.key;
      gm.n = static_cast<Index>(scores.size());
      for (int l : labels) gm.n_positive += l;
      gm.positive_fraction = static_cast<Scalar>(gm.n_positive) / static_cast<Scalar>(gm.n);
      try {
        gm.auroc = auroc(scores, labels);
        gm.auprc = auprc(scores, labels);
      } catch (const UndefinedMetricError&) {
        report.notices.push_back(std::string("age band ") + band.key +
                                 " single-class; metrics omitted");
        continue;
      }
      report.subgroups.push_back(std::move(gm));
    }
    return report;
  }

  // Phenotype categories: unweighted means of the member labels' metrics.
  if (task != Task::phenotyping) {
    throw ValidationError("phenotype-category subgroup report is a multi-label report");
  }
  const Tensor labels = labels_tensor(instances, task);
  const auto& meta = phenotype_labels();
  if (predictions.cols() != static_cast<Index>(meta.size())) {
    throw ValidationError("phenotype subgroup report expects 25 prediction columns");
  }
  for (const char* type : {"acute", "mixed", "chronic"}) {
    Scalar roc_sum = 0.0, pr_sum = 0.0;
    Index count = 0, positives = 0, total = 0;
    for (std::size_t j = 0; j < meta.size(); ++j) {
      if (std::string(meta[j].type) != type) continue;
      const std::vector<int> col = column_labels(labels, static_cast<Index>(j));
      for (int l : col) positives += l;
      total += static_cast<Index>(col.size());
      try {
        roc_sum += auroc(column_scores(predictions, static_cast<Index>(j)), col);
        pr_sum += auprc(column_scores(predictions, static_cast<Index>(j)), col);
        ++count;
      } catch (const UndefinedMetricError&) {
        report.notices.push_back(std::string("label '") + meta[j].name + "' skipped in " + type);
      }
    }
    if (count == 0) {
      report.notices.push_back(std::string("category ") + type + " empty; omitted");
      continue;
    }
    GroupMetrics gm;
    gm.key = type;
    gm.n = total;
    gm.n_positive = positives;
    gm.positive_fraction = total > 0 ? static_cast<Scalar>(positives) / static_cast<Scalar>(total) : 0.0;
    gm.auroc = roc_sum / static_cast<Scalar>(count);
    gm.auprc = pr_sum / static_cast<Scalar>(count);
    report.subgroups.push_back(std::move(gm));
  }
  return report;
}

Tensor ensemble_predict(const Model& unimodal, const Model& fused,
                        const std::vector<MultimodalInstance>& instances,
                        const EvalOptions& options) {
  if (unimodal.config.task != fused.config.task) {
    throw ValidationError("ensemble_predict: checkpoints disagree on task (" +
                          task_name(unimodal.config.task) + " vs " + task_name(fused.config.task) +
                          ")");
  }
  if (instances.empty()) throw ValidationError("ensemble_predict: no instances");
  std::vector<MultimodalInstance> paired, missing;
  std::vector<Index> paired_pos, missing_pos;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (instances[i].is_paired) {
      paired.push_back(instances[i]);
      paired_pos.push_back(static_cast<Index>(i));
    } else {
      missing.push_back(instances[i]);
      missing_pos.push_back(static_cast<Index>(i));
    }
  }
  const Index l = label_count(fused.config.task);
  Tensor out(Shape{static_cast<Index>(instances.size()), l});
  if (!paired.empty()) {
    const Tensor scores = predict_scores(fused, paired, options);
    for (std::size_t i = 0; i < paired_pos.size(); ++i) {
      out.matrix().row(paired_pos[i]) = scores.matrix().row(static_cast<Index>(i));
    }
  }
  if (!missing.empty()) {
    const Tensor scores = predict_scores(unimodal, missing, options);
    for (std::size_t i = 0; i < missing_pos.size(); ++i) {
      out.matrix().row(missing_pos[i]) = scores.matrix().row(static_cast<Index>(i));
    }
  }
  return out;
}

}  // namespace medfuse

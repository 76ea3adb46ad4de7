#pragma once

#include <functional>
#include <span>

#include "medfuse/common.hpp"
#include "medfuse/tensor.hpp"

namespace medfuse {

inline constexpr Index kBootstrapIterations = 1000;
inline constexpr Scalar kBootstrapConfidence = 0.95;

/// Probability that a random positive outranks a random negative, ties
/// counted one half (Mann-Whitney form). Requires both classes present.
Scalar auroc(std::span<const Scalar> scores, std::span<const int> labels);

/// Average precision: the precision-recall curve is stepped at each distinct
/// score (tied scores move as one group) and the area is the recall increment
/// times the precision at that threshold. Requires at least one positive.
Scalar auprc(std::span<const Scalar> scores, std::span<const int> labels);

using MetricFn = std::function<Scalar(std::span<const Scalar>, std::span<const int>)>;

struct BootstrapResult {
  Scalar low = 0.0;
  Scalar high = 0.0;
  Index n_skipped = 0;            // degenerate (single-class) resamples
  bool reliability_warning = false;  // more than half the resamples skipped
  std::vector<Scalar> samples;    // retained metric values, iteration order
};

/// Percentile bootstrap over instances resampled with replacement; the
/// interval is the 2.5th/97.5th percentile of the resampled metric at the
/// default confidence. Degenerate resamples are skipped and counted.
BootstrapResult bootstrap_ci(std::span<const Scalar> scores, std::span<const int> labels,
                             const MetricFn& metric, Index n_iter = kBootstrapIterations,
                             std::uint64_t seed = 0);

/// Linear-interpolation quantile of a sample vector (q in [0, 1]).
Scalar quantile(std::vector<Scalar> values, Scalar q);

struct LabelMetrics {
  std::string name;
  std::string type;  // acute/mixed/chronic for phenotypes, empty otherwise
  Scalar prevalence = 0.0;
  Scalar auroc = 0.0;
  Scalar auprc = 0.0;
  bool valid = true;  // false when the label was single-class and skipped
};

struct GroupMetrics {
  std::string key;
  Index n = 0;
  Index n_positive = 0;
  Scalar positive_fraction = 0.0;
  Scalar auroc = 0.0;
  Scalar auprc = 0.0;
};

struct MetricsReport {
  Scalar auroc = 0.0;
  Scalar auprc = 0.0;
  std::pair<Scalar, Scalar> auroc_ci{0.0, 0.0};
  std::pair<Scalar, Scalar> auprc_ci{0.0, 0.0};
  Index n_instances = 0;
  Index n_positive = 0;
  std::vector<LabelMetrics> per_label;
  std::vector<GroupMetrics> subgroups;
  Index labels_skipped = 0;
  Index bootstrap_skipped = 0;
  bool reliability_warning = false;
  std::vector<std::string> notices;
};

/// Point estimates plus bootstrap intervals for a single score/label column.
MetricsReport evaluate_binary(std::span<const Scalar> scores, std::span<const int> labels,
                              Index n_iter = kBootstrapIterations, std::uint64_t seed = 0);

/// Per-label AUROC/AUPRC plus their unweighted mean over valid labels for an
/// N x L score/label pair. Single-class labels are skipped with a notice.
/// Bootstrap resamples instances and recomputes the macro means.
MetricsReport macro_metrics(const Tensor& scores, const Tensor& labels,
                            const std::vector<std::string>& label_names,
                            const std::vector<std::string>& label_types,
                            Index n_iter = kBootstrapIterations, std::uint64_t seed = 0);

}  // namespace medfuse

#include "medfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace medfuse {

namespace {

void check_inputs(std::span<const Scalar> scores, std::span<const int> labels, const char* op) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw ValidationError(std::string(op) + ": scores and labels must be non-empty and aligned");
  }
  for (Scalar s : scores) {
    if (!std::isfinite(s)) throw ValidationError(std::string(op) + ": scores must be finite");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw ValidationError(std::string(op) + ": labels must be 0 or 1");
  }
}

}  // namespace

Scalar auroc(std::span<const Scalar> scores, std::span<const int> labels) {
  check_inputs(scores, labels, "auroc");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += static_cast<std::size_t>(l);
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw UndefinedMetricError("auroc undefined: inputs contain a single class");
  }
  // Average ranks over tie groups, then the Mann-Whitney statistic.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  Scalar rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const Scalar avg_rank = (static_cast<Scalar>(i + 1) + static_cast<Scalar>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    }
    i = j;
  }
  const Scalar u = rank_sum_pos - static_cast<Scalar>(n_pos) * (static_cast<Scalar>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<Scalar>(n_pos) * static_cast<Scalar>(n_neg));
}

Scalar auprc(std::span<const Scalar> scores, std::span<const int> labels) {
  check_inputs(scores, labels, "auprc");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += static_cast<std::size_t>(l);
  if (n_pos == 0) throw UndefinedMetricError("auprc undefined: no positive labels");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  // Walk tie groups from the highest score down; each group contributes the
  // recall it adds times the precision at its threshold.
  Scalar area = 0.0;
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    std::size_t group_tp = 0, group_fp = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == 1) ++group_tp;
      else ++group_fp;
      ++j;
    }
    tp += group_tp;
    fp += group_fp;
    if (group_tp > 0) {
      const Scalar precision = static_cast<Scalar>(tp) / static_cast<Scalar>(tp + fp);
      const Scalar recall_gain = static_cast<Scalar>(group_tp) / static_cast<Scalar>(n_pos);
      area += precision * recall_gain;
    }
    i = j;
  }
  return area;
}

Scalar quantile(std::vector<Scalar> values, Scalar q) {
  if (values.empty()) throw ValidationError("quantile of empty sample");
  if (q < 0.0 || q > 1.0) throw ValidationError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const Scalar pos = q * static_cast<Scalar>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
  const Scalar frac = pos - static_cast<Scalar>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

BootstrapResult bootstrap_ci(std::span<const Scalar> scores, std::span<const int> labels,
                             const MetricFn& metric, Index n_iter, std::uint64_t seed) {
  check_inputs(scores, labels, "bootstrap_ci");
  if (n_iter < 1) throw ValidationError("bootstrap_ci needs n_iter >= 1");
  const std::size_t n = scores.size();
  BootstrapResult result;
  result.samples.reserve(static_cast<std::size_t>(n_iter));
  const Rng base(seed);
  std::vector<Scalar> s(n);
  std::vector<int> l(n);
  for (Index it = 0; it < n_iter; ++it) {
    // Per-iteration derived stream so iterations are order-independent.
    Rng rng = base.derive(static_cast<std::uint64_t>(it));
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t pick = static_cast<std::size_t>(rng.uniform_index(static_cast<Index>(n)));
      s[i] = scores[pick];
      l[i] = labels[pick];
    }
    try {
      result.samples.push_back(metric(s, l));
    } catch (const UndefinedMetricError&) {
      ++result.n_skipped;
    }
  }
  if (result.samples.empty()) {
    throw UndefinedMetricError("bootstrap_ci: every resample was degenerate");
  }
  result.reliability_warning = result.n_skipped * 2 > n_iter;
  const Scalar tail = (1.0 - kBootstrapConfidence) / 2.0;
  result.low = quantile(result.samples, tail);
  result.high = quantile(result.samples, 1.0 - tail);
  return result;
}

MetricsReport evaluate_binary(std::span<const Scalar> scores, std::span<const int> labels,
                              Index n_iter, std::uint64_t seed) {
  MetricsReport report;
  report.n_instances = static_cast<Index>(scores.size());
  for (int l : labels) report.n_positive += l;
  report.auroc = auroc(scores, labels);
  report.auprc = auprc(scores, labels);
  const BootstrapResult roc = bootstrap_ci(scores, labels, auroc, n_iter, seed);
  const BootstrapResult pr =
      bootstrap_ci(scores, labels, auprc, n_iter, seed + 1);
  report.auroc_ci = {roc.low, roc.high};
  report.auprc_ci = {pr.low, pr.high};
  report.bootstrap_skipped = roc.n_skipped + pr.n_skipped;
  report.reliability_warning = roc.reliability_warning || pr.reliability_warning;
  if (report.reliability_warning) {
    report.notices.push_back("bootstrap skipped more than half of the resamples");
  }
  return report;
}

namespace {

struct MacroColumns {
  std::vector<std::vector<Scalar>> scores;
  std::vector<std::vector<int>> labels;
};

MacroColumns to_columns(const Tensor& scores, const Tensor& labels) {
  if (scores.rank() != 2 || labels.rank() != 2 || scores.shape() != labels.shape()) {
    throw ValidationError("macro_metrics expects matching N x L scores and labels");
  }
  const Index n = scores.rows(), l = scores.cols();
  MacroColumns cols;
  cols.scores.assign(static_cast<std::size_t>(l), std::vector<Scalar>(static_cast<std::size_t>(n)));
  cols.labels.assign(static_cast<std::size_t>(l), std::vector<int>(static_cast<std::size_t>(n)));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < l; ++j) {
      cols.scores[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = scores.at(i, j);
      cols.labels[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] =
          labels.at(i, j) > 0.5 ? 1 : 0;
    }
  }
  return cols;
}

// Unweighted means over labels with both classes present; throws when every
// label is degenerate.
std::pair<Scalar, Scalar> macro_point(const std::vector<std::vector<Scalar>>& scores,
                                      const std::vector<std::vector<int>>& labels) {
  Scalar roc_sum = 0.0, pr_sum = 0.0;
  Index valid = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    try {
      const Scalar roc = auroc(scores[j], labels[j]);
      const Scalar pr = auprc(scores[j], labels[j]);
      roc_sum += roc;
      pr_sum += pr;
      ++valid;
    } catch (const UndefinedMetricError&) {
    }
  }
  if (valid == 0) throw UndefinedMetricError("macro_metrics: every label is single-class");
  return {roc_sum / static_cast<Scalar>(valid), pr_sum / static_cast<Scalar>(valid)};
}

}  // namespace

MetricsReport macro_metrics(const Tensor& scores, const Tensor& labels,
                            const std::vector<std::string>& label_names,
                            const std::vector<std::string>& label_types,
                            Index n_iter, std::uint64_t seed) {
  const MacroColumns cols = to_columns(scores, labels);
  const Index n = scores.rows();
  const std::size_t l = cols.scores.size();
  MetricsReport report;
  report.n_instances = n;

  Scalar roc_sum = 0.0, pr_sum = 0.0;
  Index valid = 0;
  for (std::size_t j = 0; j < l; ++j) {
    LabelMetrics lm;
    lm.name = j < label_names.size() ? label_names[j] : "label_" + std::to_string(j);
    lm.type = j < label_types.size() ? label_types[j] : "";
    Index pos = 0;
    for (int y : cols.labels[j]) pos += y;
    lm.prevalence = static_cast<Scalar>(pos) / static_cast<Scalar>(n);
    report.n_positive += pos;
    try {
      lm.auroc = auroc(cols.scores[j], cols.labels[j]);
      lm.auprc = auprc(cols.scores[j], cols.labels[j]);
      roc_sum += lm.auroc;
      pr_sum += lm.auprc;
      ++valid;
    } catch (const UndefinedMetricError&) {
      lm.valid = false;
      ++report.labels_skipped;
      report.notices.push_back("label '" + lm.name + "' skipped: single class");
    }
    report.per_label.push_back(std::move(lm));
  }
  if (valid == 0) throw UndefinedMetricError("macro_metrics: every label is single-class");
  report.auroc = roc_sum / static_cast<Scalar>(valid);
  report.auprc = pr_sum / static_cast<Scalar>(valid);

  // Bootstrap over instances, recomputing both macro means per resample.
  const Rng base(seed);
  std::vector<Scalar> roc_samples, pr_samples;
  Index skipped = 0;
  std::vector<std::vector<Scalar>> rs(l);
  std::vector<std::vector<int>> rl(l);
  for (Index it = 0; it < n_iter; ++it) {
    Rng rng = base.derive(static_cast<std::uint64_t>(it));
    for (std::size_t j = 0; j < l; ++j) {
      rs[j].resize(static_cast<std::size_t>(n));
      rl[j].resize(static_cast<std::size_t>(n));
    }
    for (Index i = 0; i < n; ++i) {
      const std::size_t pick = static_cast<std::size_t>(rng.uniform_index(n));
      for (std::size_t j = 0; j < l; ++j) {
        rs[j][static_cast<std::size_t>(i)] = cols.scores[j][pick];
        rl[j][static_cast<std::size_t>(i)] = cols.labels[j][pick];
      }
    }
    try {
      const auto [roc, pr] = macro_point(rs, rl);
      roc_samples.push_back(roc);
      pr_samples.push_back(pr);
    } catch (const UndefinedMetricError&) {
      ++skipped;
    }
  }
  report.bootstrap_skipped = skipped;
  report.reliability_warning = skipped * 2 > n_iter;
  if (!roc_samples.empty()) {
    const Scalar tail = (1.0 - kBootstrapConfidence) / 2.0;
    report.auroc_ci = {quantile(roc_samples, tail), quantile(roc_samples, 1.0 - tail)};
    report.auprc_ci = {quantile(pr_samples, tail), quantile(pr_samples, 1.0 - tail)};
  }
  return report;
}

}  // namespace medfuse

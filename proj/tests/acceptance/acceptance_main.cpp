// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Criteria 5-7 share five seeded end-to-end training runs.
//
// Usage: medfuse_acceptance [path-to-medfuse-cli]
// The CLI path (when given) lets the determinism criterion drive the actual
// `medfuse experiment` command; otherwise the same code path is exercised
// through the library.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <vector>

#include "medfuse/harness.hpp"
#include "../oracles.hpp"

using namespace medfuse;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, const char* name, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", criterion, name,
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Scalar median(std::vector<Scalar> values) {
  std::sort(values.begin(), values.end());
  return values[values.size() / 2];
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Spearman rank correlation with average ranks for ties.
Scalar spearman(const std::vector<Scalar>& a, const std::vector<Scalar>& b) {
  auto ranks = [](const std::vector<Scalar>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<Scalar> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j < n && v[order[j]] == v[order[i]]) ++j;
      const Scalar avg = (static_cast<Scalar>(i) + static_cast<Scalar>(j - 1)) / 2.0 + 1.0;
      for (std::size_t k = i; k < j; ++k) r[order[k]] = avg;
      i = j;
    }
    return r;
  };
  const std::vector<Scalar> ra = ranks(a);
  const std::vector<Scalar> rb = ranks(b);
  const Scalar n = static_cast<Scalar>(a.size());
  Scalar ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  Scalar cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

ModelConfig small_config(Task task, ModelKind kind, Index resolution = 16) {
  ModelConfig config;
  config.task = task;
  config.kind = kind;
  config.ehr_feature_dim = kFeatureWidth;
  config.ehr_hidden_dim = 8;
  config.ehr_layers = 2;
  config.ehr_dropout = 0.0;
  config.cxr.input_resolution = resolution;
  config.cxr.stage_widths = {4, 8};
  config.cxr.blocks_per_stage = 1;
  config.cxr.feature_dim = 16;
  config.fusion_hidden_dim = 12;
  return config;
}

// ---------------------------------------------------------------------------
// Criterion 1: finite-difference gradient checks, layers and architectures.

void criterion_1() {
  const auto start = Clock::now();
  bool ok = true;
  std::string first_failure;
  auto expect = [&](const char* what, const oracle::GradCheckResult& result) {
    if (!result.ok && first_failure.empty()) {
      first_failure = what;
      ok = false;
    }
  };

  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);

    {  // LSTM cell
      LstmCellParams p = make_lstm_cell(3, 2, rng);
      Tensor x = Tensor::uniform({2, 3}, -1.0, 1.0, rng, true);
      Tensor h0 = Tensor::uniform({2, 2}, -1.0, 1.0, rng, true);
      Tensor c0 = Tensor::uniform({2, 2}, -1.0, 1.0, rng, true);
      expect("lstm_cell", oracle::check_gradients(
                              [&]() {
                                auto [h, c] = lstm_cell_step(p, x, h0, c0);
                                return sum(add(h, c));
                              },
                              {p.w_ih, p.w_hh, p.bias, x, h0, c0}));
    }
    {  // stacked LSTM
      std::vector<LstmCellParams> layers = {make_lstm_cell(4, 3, rng), make_lstm_cell(3, 2, rng)};
      Tensor x = Tensor::uniform({2, 3, 4}, -1.0, 1.0, rng, true);
      std::vector<Tensor> params = {x};
      for (const auto& l : layers) {
        params.push_back(l.w_ih);
        params.push_back(l.w_hh);
        params.push_back(l.bias);
      }
      expect("stacked_lstm", oracle::check_gradients(
                                 [&]() {
                                   Rng dr(0);
                                   return sum(stacked_lstm_forward(layers, x, 0.0, false, dr));
                                 },
                                 params));
    }
    {  // conv block with projection shortcut
      ConvBlockParams block = make_conv_block(2, 3, 3, 2, true, rng);
      Tensor x = Tensor::uniform({1, 2, 5, 5}, 0.2, 1.2, rng, true);
      expect("conv_block",
             oracle::check_gradients([&]() { return sum(conv_forward(block, x)); },
                                     {block.kernels, block.bias, block.shortcut_kernels,
                                      block.shortcut_bias, x},
                                     1e-4, 2e-5, 1e-7));
    }
    {  // pooling and linear
      Tensor x = Tensor::uniform({2, 3, 4, 4}, -1.0, 1.0, rng, true);
      expect("global_avg_pool",
             oracle::check_gradients(
                 [&]() { return sum(mul(global_avg_pool(x), global_avg_pool(x))); }, {x}));
      LinearParams lin = make_linear(4, 3, rng);
      Tensor v = Tensor::uniform({2, 4}, -1.0, 1.0, rng, true);
      expect("linear", oracle::check_gradients([&]() { return sum(linear_forward(lin, v)); },
                                               {lin.weight, lin.bias, v}));
    }
    {  // dropout with fixed mask, and the loss itself
      Tensor x = Tensor::uniform({3, 4}, -1.0, 1.0, rng, true);
      expect("dropout", oracle::check_gradients(
                            [&]() {
                              Rng fixed(7);
                              return sum(dropout(x, 0.4, true, fixed));
                            },
                            {x}));
      Tensor logits = Tensor::uniform({3, 4}, -2.0, 2.0, rng, true);
      Tensor y({3, 4});
      for (Index i = 0; i < y.numel(); ++i) y.data()[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
      expect("bce", oracle::check_gradients([&]() { return bce_with_logits(logits, y); },
                                            {logits}));
    }
    {  // full architectures on a mixed batch
      Rng setup(seed + 40);
      EhrEncoderParams ehr = make_ehr_encoder(5, 3, 2, 0.0, setup);
      CxrEncoderConfig cc;
      cc.input_resolution = 8;
      cc.stage_widths = {2};
      cc.blocks_per_stage = 1;
      cc.feature_dim = 4;
      CxrEncoderParams cxr = make_cxr_encoder(cc, setup);
      FusionParams fusion = make_fusion(4, 3, 4, 2, setup);
      Batch batch;
      batch.size = 2;
      batch.x_ehr = Tensor::uniform({2, 3, 5}, -1.0, 1.0, setup);
      batch.y = Tensor({2, 2});
      batch.y.data()[0] = 1.0;
      batch.y.data()[3] = 1.0;
      batch.paired_rows = {1};
      batch.x_cxr = Tensor::uniform({1, 3, 8, 8}, -1.0, 1.0, setup);
      std::vector<Tensor> shared = {cxr.stem.kernels, cxr.stem.bias, cxr.head.weight,
                                    cxr.head.bias};
      for (const auto& l : ehr.lstm_layers) {
        shared.push_back(l.w_ih);
        shared.push_back(l.w_hh);
        shared.push_back(l.bias);
      }
      for (const auto& b : cxr.blocks) {
        shared.push_back(b.kernels);
        shared.push_back(b.bias);
      }
      std::vector<Tensor> params = shared;
      params.insert(params.end(),
                    {fusion.projection.weight, fusion.projection.bias, fusion.fusion_lstm.w_ih,
                     fusion.fusion_lstm.w_hh, fusion.fusion_lstm.bias,
                     fusion.classifier.linear.weight, fusion.classifier.linear.bias});
      expect("medfuse_architecture",
             oracle::check_gradients(
                 [&]() {
                   Rng dr(0);
                   return bce_with_logits(
                       medfuse_forward_logits(ehr, cxr, fusion, batch, false, dr), batch.y);
                 },
                 params, 1e-4, 2e-5, 1e-7));

      ConcatFusionParams concat =
          make_concat_fusion(4, 3, 5, 2, MissingVectorMode::learnable, setup);
      std::vector<Tensor> cparams = shared;
      cparams.insert(cparams.end(),
                     {concat.projection.weight, concat.projection.bias, concat.head_hidden.weight,
                      concat.head_hidden.bias, concat.head_out.weight, concat.head_out.bias,
                      concat.missing_vector});
      expect("concat_architecture",
             oracle::check_gradients(
                 [&]() {
                   Rng dr(0);
                   return bce_with_logits(
                       concat_fusion_forward_logits(ehr, cxr, concat, batch, false, dr), batch.y);
                 },
                 cparams, 1e-4, 2e-5, 1e-7));
    }
  }

  const double elapsed = seconds_since(start);
  char detail[160];
  if (ok && elapsed < 60.0) {
    std::snprintf(detail, sizeof(detail), "all layers and both architectures, rel tol 1e-5, %.1fs",
                  elapsed);
    report(1, "gradient correctness", true, detail);
  } else {
    std::snprintf(detail, sizeof(detail), "%s, %.1fs",
                  ok ? "gradients fine but over the 60s budget" : first_failure.c_str(), elapsed);
    report(1, "gradient correctness", false, detail);
  }
}

// ---------------------------------------------------------------------------
// Criterion 2: oracle equivalence on >= 50 randomized instances each.

void criterion_2() {
  bool ok = true;
  std::string detail = "matmul/conv/lstm within 1e-12, auroc/auprc within 1e-9, 50 instances each";
  Rng rng(2024);

  for (int trial = 0; trial < 50 && ok; ++trial) {
    const Index m = 1 + rng.uniform_index(12);
    const Index k = 1 + rng.uniform_index(12);
    const Index n = 1 + rng.uniform_index(12);
    Tensor a = Tensor::uniform({m, k}, -2.0, 2.0, rng);
    Tensor b = Tensor::uniform({k, n}, -2.0, 2.0, rng);
    const auto expected =
        oracle::matmul(oracle::tensor_values(a), oracle::tensor_values(b), m, k, n);
    Tensor c = matmul(a, b);
    for (Index i = 0; i < c.numel(); ++i) {
      if (std::abs(c.data()[i] - expected[static_cast<std::size_t>(i)]) > 1e-12) {
        ok = false;
        detail = "matmul disagreed with the triple-loop oracle";
      }
    }
  }

  for (int trial = 0; trial < 50 && ok; ++trial) {
    const Index h = 2 + rng.uniform_index(10);
    const Index w = 2 + rng.uniform_index(10);
    const Index in_ch = 1 + rng.uniform_index(3);
    const Index out_ch = 1 + rng.uniform_index(3);
    const Index stride = 1 + rng.uniform_index(2);
    Tensor x = Tensor::uniform({1, in_ch, h, w}, -1.0, 1.0, rng);
    Tensor kern = Tensor::uniform({out_ch, in_ch, 3, 3}, -1.0, 1.0, rng);
    Tensor bias = Tensor::uniform({out_ch}, -1.0, 1.0, rng);
    Tensor y = conv2d(x, kern, bias, stride);
    const auto expected = oracle::conv2d(oracle::tensor_values(x), 1, in_ch, h, w,
                                         oracle::tensor_values(kern), out_ch, 3,
                                         oracle::tensor_values(bias), stride);
    for (Index i = 0; i < y.numel(); ++i) {
      if (std::abs(y.data()[i] - expected[static_cast<std::size_t>(i)]) > 1e-12) {
        ok = false;
        detail = "conv2d disagreed with the nested-loop oracle";
      }
    }
  }

  for (int trial = 0; trial < 50 && ok; ++trial) {
    const Index d = 1 + rng.uniform_index(8);
    const Index hid = 1 + rng.uniform_index(8);
    LstmCellParams p = make_lstm_cell(d, hid, rng);
    Tensor x = Tensor::uniform({1, d}, -1.0, 1.0, rng);
    Tensor h0 = Tensor::uniform({1, hid}, -1.0, 1.0, rng);
    Tensor c0 = Tensor::uniform({1, hid}, -1.0, 1.0, rng);
    auto [h, c] = lstm_cell_step(p, x, h0, c0);
    const auto ref = oracle::lstm_step(oracle::tensor_values(p.w_ih),
                                       oracle::tensor_values(p.w_hh), oracle::tensor_values(p.bias),
                                       oracle::tensor_values(x), oracle::tensor_values(h0),
                                       oracle::tensor_values(c0), d, hid);
    for (Index i = 0; i < hid; ++i) {
      if (std::abs(h.at(0, i) - ref.h[static_cast<std::size_t>(i)]) > 1e-12 ||
          std::abs(c.at(0, i) - ref.c[static_cast<std::size_t>(i)]) > 1e-12) {
        ok = false;
        detail = "lstm step disagreed with the scalar oracle";
      }
    }
  }

  int metric_checked = 0;
  while (metric_checked < 50 && ok) {
    const std::size_t n = 3 + static_cast<std::size_t>(rng.uniform_index(10));
    std::vector<Scalar> scores(n);
    std::vector<int> labels(n);
    bool has0 = false, has1 = false;
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<Scalar>(rng.uniform_index(5)) / 4.0;
      labels[i] = rng.bernoulli(0.5) ? 1 : 0;
      (labels[i] ? has1 : has0) = true;
    }
    if (!has0 || !has1) continue;
    ++metric_checked;
    if (std::abs(auroc(scores, labels) - oracle::auroc(scores, labels)) > 1e-9 ||
        std::abs(auprc(scores, labels) - oracle::average_precision(scores, labels)) > 1e-9) {
      ok = false;
      detail = "metric disagreed with its brute-force oracle";
    }
  }

  report(2, "oracle equivalence", ok, detail);
}

// ---------------------------------------------------------------------------
// Criterion 3: missing-modality invariant, bit-identical over 1000 instances.

void criterion_3() {
  Rng setup(3030);
  EhrEncoderParams ehr = make_ehr_encoder(6, 4, 2, 0.0, setup);
  CxrEncoderConfig cc;
  cc.input_resolution = 8;
  cc.stage_widths = {2};
  cc.blocks_per_stage = 1;
  cc.feature_dim = 5;
  CxrEncoderParams cxr = make_cxr_encoder(cc, setup);
  FusionParams fusion = make_fusion(5, 4, 6, 3, setup);

  Index checked = 0;
  bool ok = true;
  Rng rng(3131);
  while (checked < 1000 && ok) {
    const Index batch_size = 4 + rng.uniform_index(8);
    Batch batch;
    batch.size = batch_size;
    batch.x_ehr = Tensor::uniform({batch_size, 3, 6}, -1.0, 1.0, rng);
    batch.y = Tensor({batch_size, 3});
    std::vector<Index> missing_rows;
    for (Index row = 0; row < batch_size; ++row) {
      if (rng.bernoulli(0.5)) batch.paired_rows.push_back(row);
      else missing_rows.push_back(row);
    }
    if (!batch.paired_rows.empty()) {
      batch.x_cxr = Tensor::uniform({static_cast<Index>(batch.paired_rows.size()), 3, 8, 8},
                                    -1.0, 1.0, rng);
    }
    Rng d1(0);
    Tensor out = medfuse_forward(ehr, cxr, fusion, batch, false, d1);

    // Manual single-element sequence: one fusion step over v_ehr, classified.
    Rng d2(0);
    Tensor v_ehr = encode_ehr(ehr, batch.x_ehr, false, d2);
    auto state = lstm_cell_step(fusion.fusion_lstm, v_ehr,
                                Tensor::zeros({batch_size, fusion.hidden_dim()}),
                                Tensor::zeros({batch_size, fusion.hidden_dim()}));
    Tensor manual = classify(fusion.classifier, state.h);
    for (Index row : missing_rows) {
      if (std::memcmp(out.data() + row * 3, manual.data() + row * 3, 3 * sizeof(Scalar)) != 0) {
        ok = false;
      }
      ++checked;
    }
  }
  report(3, "missing-modality invariant", ok,
         "bit-identical single-step evaluation on " + std::to_string(checked) +
             " image-missing instances");
}

// ---------------------------------------------------------------------------
// Criterion 4: protocol constants audit.

void criterion_4() {
  const TrainConfig fresh;
  bool ok = true;
  std::string bad;
  auto check = [&](bool cond, const char* what) {
    if (!cond) {
      ok = false;
      bad += std::string(bad.empty() ? "" : ", ") + what;
    }
  };
  check(fresh.batch_size == 16, "batch_size != 16");
  check(fresh.lr_search_min == 1e-5, "lr_search_min != 1e-5");
  check(fresh.lr_search_max == 1e-3, "lr_search_max != 1e-3");
  check(fresh.patience == 15, "patience != 15");
  check(fresh.max_epochs == 50, "max_epochs != 50");
  check(kBootstrapIterations == 1000, "bootstrap iterations != 1000");
  check(kBootstrapConfidence == 0.95, "bootstrap confidence != 0.95");
  report(4, "protocol fidelity", ok,
         ok ? "batch 16, lr [1e-5, 1e-3], patience 15, max epochs 50, bootstrap 1000 @ 95%"
            : bad);
}

// ---------------------------------------------------------------------------
// Criteria 5-7: shared five-seed end-to-end runs.

struct SeedOutcome {
  Scalar unimodal_paired_auroc = 0.0;
  Scalar medfuse_paired_auroc = 0.0;
  Scalar pt_val_auroc = 0.0;
  Scalar ri_val_auroc = 0.0;
  Scalar drop_spearman = 0.0;
};

SeedOutcome run_seed(std::uint64_t seed) {
  SyntheticConfig cfg;
  cfg.task = Task::mortality;
  cfg.n_subjects = 2000;
  cfg.missing_image_rate = 0.6;
  cfg.cross_modal_signal = 0.8;
  cfg.image_resolution = 32;
  cfg.seed = seed;
  const VariableRegistry& registry = default_registry();
  DatasetSplit data = generate_synthetic(cfg, registry);

  ModelConfig mc;
  mc.task = Task::mortality;
  mc.kind = ModelKind::medfuse;
  mc.cxr.input_resolution = 32;
  mc.cxr.stage_widths = {8, 16, 32};
  mc.cxr.blocks_per_stage = 1;

  const Index epochs = 3;
  TrainConfig base;
  base.max_epochs = epochs;
  base.patience = 15;
  base.learning_rate = 4e-4;
  base.seed = seed;

  // Two-stage protocol with pretrained encoders.
  Rng init(seed ^ 0xABCDEFULL);
  Model model = make_model(mc, init);
  TrainConfig pre_ehr = base;
  pre_ehr.stage = Stage::pretrain_ehr;
  const StageResult ehr_stage = run_stage(pre_ehr, model, data, registry.hash);
  TrainConfig pre_cxr = base;
  pre_cxr.stage = Stage::pretrain_cxr;
  run_stage(pre_cxr, model, data, registry.hash);
  // The pretrained clinical encoder plus its head is the uni-modal baseline.
  Model unimodal = model_from_checkpoint(ehr_stage.best);

  TrainConfig fin = base;
  fin.stage = Stage::finetune_fusion;
  const StageResult pt_stage = run_stage(fin, model, data, registry.hash);

  // Random-init variant: same budget, no pretraining.
  Rng ri_init(seed ^ 0x123456ULL);
  Model ri_model = make_model(mc, ri_init);
  TrainConfig ri_fin = fin;
  ri_fin.pretrained_init = false;
  const StageResult ri_stage = run_stage(ri_fin, ri_model, data, registry.hash);

  std::vector<MultimodalInstance> paired_test;
  for (const MultimodalInstance& inst : data.test) {
    if (inst.is_paired) paired_test.push_back(inst);
  }
  EvalOptions options;
  options.augment = scaled_augment_config(32);

  SeedOutcome outcome;
  outcome.medfuse_paired_auroc =
      validation_auroc(model, Stage::finetune_fusion, paired_test, options);
  outcome.unimodal_paired_auroc =
      validation_auroc(unimodal, Stage::pretrain_ehr, paired_test, options);
  outcome.pt_val_auroc = pt_stage.best.best_val_auroc;
  outcome.ri_val_auroc = ri_stage.best.best_val_auroc;

  const std::vector<Scalar> rates = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<Scalar> aurocs;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    const std::vector<MultimodalInstance> dropped =
        drop_images(paired_test, rates[i], seed + 7 * i);
    aurocs.push_back(validation_auroc(model, Stage::finetune_fusion, dropped, options));
  }
  outcome.drop_spearman = spearman(aurocs, rates);
  return outcome;
}

void criteria_5_6_7() {
  const auto start = Clock::now();
  std::vector<Scalar> gaps, pt_vals, ri_vals, spearmans;
  for (std::uint64_t seed = 101; seed <= 105; ++seed) {
    const SeedOutcome outcome = run_seed(seed);
    gaps.push_back(outcome.medfuse_paired_auroc - outcome.unimodal_paired_auroc);
    pt_vals.push_back(outcome.pt_val_auroc);
    ri_vals.push_back(outcome.ri_val_auroc);
    spearmans.push_back(outcome.drop_spearman);
    std::printf("  seed %llu: paired AUROC fusion-vs-unimodal gap %+.3f, val PT %.3f RI %.3f, "
                "drop-sweep spearman %+.2f\n",
                static_cast<unsigned long long>(seed), gaps.back(), pt_vals.back(),
                ri_vals.back(), spearmans.back());
    std::fflush(stdout);
  }
  const double elapsed = seconds_since(start);

  char detail[200];
  const Scalar median_gap = median(gaps);
  std::snprintf(detail, sizeof(detail),
                "median paired-test AUROC gap %+.3f (threshold +0.03), %.0fs total", median_gap,
                elapsed);
  report(5, "relative-ordering reproduction", median_gap >= 0.03 && elapsed <= 1800.0, detail);

  const Scalar median_pt = median(pt_vals);
  const Scalar median_ri = median(ri_vals);
  std::snprintf(detail, sizeof(detail), "median val AUROC: pretrained %.3f vs random-init %.3f",
                median_pt, median_ri);
  report(6, "pretraining benefit", median_pt >= median_ri, detail);

  const Scalar median_rho = median(spearmans);
  std::snprintf(detail, sizeof(detail),
                "median Spearman(AUROC, drop rate) %+.2f over 6 rates (threshold -0.8)",
                median_rho);
  report(7, "drop-rate monotonic trend", median_rho <= -0.8, detail);
}

// ---------------------------------------------------------------------------
// Criterion 8: overfit a fixed 4-instance batch in 500 steps.

bool overfit_architecture(ModelKind kind, const DatasetSplit& data, Scalar* final_loss) {
  ModelConfig mc = small_config(Task::mortality, kind, 8);
  mc.cxr.stage_widths = {2, 4};
  mc.cxr.feature_dim = 12;
  Rng init(99);
  Model model = make_model(mc, init);
  if (kind == ModelKind::early_fusion) freeze_encoders(model);

  // Two paired + two image-missing instances.
  std::vector<Index> picks;
  for (std::size_t i = 0; i < data.train.size() && picks.size() < 2; ++i) {
    if (data.train[i].is_paired) picks.push_back(static_cast<Index>(i));
  }
  for (std::size_t i = 0; i < data.train.size() && picks.size() < 4; ++i) {
    if (!data.train[i].is_paired) picks.push_back(static_cast<Index>(i));
  }
  Rng batch_rng(0);
  const Batch batch = make_batch(data.train, picks, Task::mortality, scaled_augment_config(8),
                                 AugmentMode::eval, batch_rng);

  const std::vector<Tensor> params = trainable_parameters(model, Stage::finetune_fusion);
  AdamState opt(params);
  Scalar best = 1e9;
  for (int step = 0; step < 500; ++step) {
    Tape tape;
    Scalar loss_value;
    {
      TapeScope scope(tape);
      Rng dr(0);
      Tensor loss = bce_with_logits(model_logits(model, batch, true, dr), batch.y);
      loss_value = loss.value();
      zero_gradients(params);
      tape.backward(loss);
    }
    clip_gradients(params, 5.0);
    opt.step(3e-3);
    best = std::min(best, loss_value);
  }
  *final_loss = best;
  return best < 0.05;
}

void criterion_8() {
  SyntheticConfig cfg;
  cfg.n_subjects = 30;
  cfg.missing_image_rate = 0.5;
  cfg.image_resolution = 8;
  cfg.seed = 88;
  DatasetSplit data = generate_synthetic(cfg, default_registry());
  bool ok = true;
  std::string detail;
  for (ModelKind kind : {ModelKind::medfuse, ModelKind::early_fusion, ModelKind::joint_fusion,
                         ModelKind::lstm_uni}) {
    Scalar loss = 0.0;
    const bool fit = overfit_architecture(kind, data, &loss);
    char part[64];
    std::snprintf(part, sizeof(part), "%s %.4f", model_kind_name(kind).c_str(), loss);
    detail += std::string(detail.empty() ? "" : ", ") + part;
    ok = ok && fit;
  }
  report(8, "overfit smoke test", ok, "min BCE within 500 steps: " + detail);
}

// ---------------------------------------------------------------------------
// Criterion 9: byte-identical metrics JSON for identical spec and seed.

void criterion_9(const char* cli_path) {
  const std::string dataset_root = "/tmp/medfuse_acceptance_dataset";
  const std::string out_root = "/tmp/medfuse_acceptance_runs";
  fs::remove_all(out_root);
  fs::remove_all(dataset_root);
  {
    SyntheticConfig cfg;
    cfg.n_subjects = 60;
    cfg.missing_image_rate = 0.4;
    cfg.image_resolution = 8;
    cfg.seed = 90;
    const VariableRegistry& registry = default_registry();
    DatasetSplit split = generate_synthetic(cfg, registry);
    DatasetMeta meta;
    meta.task = cfg.task;
    meta.seed = cfg.seed;
    meta.registry_hash = registry.hash;
    meta.image_resolution = cfg.image_resolution;
    meta.source_resolution = synthetic_source_resolution(cfg.image_resolution);
    meta.horizon_hours = cfg.horizon_hours;
    meta.missing_image_rate = cfg.missing_image_rate;
    meta.cross_modal_signal = cfg.cross_modal_signal;
    meta.n_subjects = cfg.n_subjects;
    save_dataset(split, dataset_root, meta, default_registry_text());
  }

  ExperimentSpec spec;
  spec.name = "determinism-check";
  spec.task = Task::mortality;
  spec.model = "medfuse";
  spec.eval_set = "partial";
  spec.n_lr_runs = 1;
  spec.seed = 9;
  spec.cxr_stage_widths = {2, 4};
  spec.cxr_blocks_per_stage = 1;
  spec.train.max_epochs = 2;
  spec.train.batch_size = 8;

  std::string first, second;
  bool used_cli = false;
  if (cli_path != nullptr && fs::exists(cli_path)) {
    used_cli = true;
    const std::string spec_path = "/tmp/medfuse_acceptance_spec.json";
    std::ofstream spec_out(spec_path);
    spec_out << experiment_spec_to_json(spec).dump(2) << "\n";
    spec_out.close();
    auto run_cli = [&](const std::string& out_dir) {
      const std::string cmd = std::string(cli_path) + " experiment --spec " + spec_path +
                              " --data " + dataset_root + " --out " + out_dir + " >/dev/null";
      if (std::system(cmd.c_str()) != 0) throw std::runtime_error("medfuse experiment failed");
      const std::string latest = slurp(fs::path(out_dir) / spec.name / "latest");
      const std::string run_name = latest.substr(0, latest.find('\n'));
      return slurp(fs::path(out_dir) / spec.name / run_name / "run" / "metrics.json");
    };
    first = run_cli(out_root + "/a");
    second = run_cli(out_root + "/b");
  } else {
    const ExperimentResult a = run_experiment(spec, dataset_root, out_root + "/a");
    const ExperimentResult b = run_experiment(spec, dataset_root, out_root + "/b");
    first = slurp(fs::path(a.sub_runs[0].directory) / "metrics.json");
    second = slurp(fs::path(b.sub_runs[0].directory) / "metrics.json");
  }
  report(9, "determinism", !first.empty() && first == second,
         std::string(used_cli ? "medfuse experiment CLI" : "run_experiment") +
             " twice with identical spec and seed: metrics JSON byte-identical");
}

// ---------------------------------------------------------------------------
// Criterion 10: bootstrap sanity.

void criterion_10() {
  const std::vector<Scalar> separable_scores{0.95, 0.9, 0.85, 0.8, 0.2, 0.15, 0.1, 0.05};
  const std::vector<int> separable_labels{1, 1, 1, 1, 0, 0, 0, 0};
  const BootstrapResult ci = bootstrap_ci(separable_scores, separable_labels, auroc, 1000, 7);
  const bool interval_ok = ci.low == 1.0 && ci.high == 1.0;

  bool ties_ok = true;
  for (int pos = 1; pos <= 7; ++pos) {
    std::vector<Scalar> scores(8, 0.3);
    std::vector<int> labels(8, 0);
    for (int i = 0; i < pos; ++i) labels[static_cast<std::size_t>(i)] = 1;
    const Scalar pi = static_cast<Scalar>(pos) / 8.0;
    if (std::abs(auprc(scores, labels) - pi) > 1e-9) ties_ok = false;
  }
  char detail[128];
  std::snprintf(detail, sizeof(detail),
                "separable CI (%.3f, %.3f); all-ties AUPRC equals prevalence within 1e-9", ci.low,
                ci.high);
  report(10, "bootstrap sanity", interval_ok && ties_ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
  const auto start = Clock::now();
  const char* cli_path = argc > 1 ? argv[1] : nullptr;
  try {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criteria_5_6_7();
    criterion_8();
    criterion_9(cli_path);
    criterion_10();
  } catch (const std::exception& e) {
    std::printf("[FAIL] acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criterion failure(s), %.0fs total\n", g_failures, seconds_since(start));
  return g_failures == 0 ? 0 : 1;
}

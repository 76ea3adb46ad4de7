#include <cmath>
#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "medfuse/harness.hpp"
#include "medfuse/training.hpp"
#include "oracles.hpp"

using namespace medfuse;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model_config(Task task, ModelKind kind) {
  ModelConfig config;
  config.task = task;
  config.kind = kind;
  config.ehr_hidden_dim = 8;
  config.ehr_layers = 2;
  config.ehr_dropout = 0.0;
  config.cxr.input_resolution = 8;
  config.cxr.stage_widths = {2, 4};
  config.cxr.blocks_per_stage = 1;
  config.cxr.feature_dim = 12;
  config.fusion_hidden_dim = 10;
  return config;
}

DatasetSplit tiny_dataset(std::uint64_t seed = 1, Index subjects = 40,
                          Scalar missing_rate = 0.4) {
  SyntheticConfig cfg;
  cfg.n_subjects = subjects;
  cfg.missing_image_rate = missing_rate;
  cfg.image_resolution = 8;
  cfg.seed = seed;
  return generate_synthetic(cfg, default_registry());
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("bce closed-form values") {
  Tensor one = Tensor::from_values({1}, {1.0});
  CHECK(bce_loss(one, Tensor::from_values({1}, {20.0})).value() ==
        doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-12));
  CHECK(bce_loss(one, Tensor::from_values({1}, {20.0})).value() < 1e-8);  // confident and correct
  CHECK(bce_loss(one, Tensor::from_values({1}, {0.0})).value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("bce matches the clamped-probability oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 1 + rng.uniform_index(24);
    Tensor logits = Tensor::uniform({n}, -8.0, 8.0, rng);
    Tensor targets({n});
    for (Index i = 0; i < n; ++i) targets.data()[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const Scalar expected =
        oracle::bce_clamped(oracle::tensor_values(logits), oracle::tensor_values(targets));
    CHECK(bce_loss(targets, logits).value() == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("adam: zero gradient leaves the parameter unchanged") {
  Tensor p = Tensor::from_values({3}, {1.0, -2.0, 0.5});
  p.set_requires_grad(true);
  p.ensure_grad();
  AdamState opt({p});
  opt.step(1e-3);
  CHECK(p.at(0) == 1.0);
  CHECK(p.at(1) == -2.0);
  CHECK(p.at(2) == 0.5);
}

TEST_CASE("adam: first-step closed form") {
  Tensor p = Tensor::from_values({2}, {0.3, -0.4});
  p.set_requires_grad(true);
  p.ensure_grad();
  p.grad_array() = 1.0;
  AdamState opt({p});
  const Scalar lr = 1e-3;
  opt.step(lr);
  // Bias correction makes m_hat = v_hat = 1, so the step is -lr / (1 + eps).
  const Scalar expected_delta = -lr / (1.0 + 1e-8);
  CHECK(p.at(0) == doctest::Approx(0.3 + expected_delta).epsilon(1e-15));
  CHECK(p.at(1) == doctest::Approx(-0.4 + expected_delta).epsilon(1e-15));
  CHECK(std::abs(expected_delta + 9.99e-4) < 1e-5);
}

TEST_CASE("adam converges on f(x) = x^2") {
  Tensor x = Tensor::from_values({1}, {1.0});
  x.set_requires_grad(true);
  AdamState opt({x});
  for (int step = 0; step < 100; ++step) {
    Tape tape;
    {
      TapeScope scope(tape);
      zero_gradients({x});
      tape.backward(sum(mul(x, x)));
    }
    opt.step(0.1);
  }
  CHECK(std::abs(x.value()) < 0.05);
}

TEST_CASE("adam: missing gradient on a trainable parameter is a contract violation") {
  Tensor p = Tensor::from_values({2}, {1.0, 2.0});
  p.set_requires_grad(true);
  AdamState opt({p});
  CHECK_THROWS_AS(opt.step(1e-3), ContractError);
}

TEST_CASE("gradient clipping caps the global norm") {
  Tensor a = Tensor::from_values({2}, {0.0, 0.0});
  Tensor b = Tensor::from_values({1}, {0.0});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  a.ensure_grad();
  b.ensure_grad();
  a.grad_array()(0) = 6.0;
  a.grad_array()(1) = 8.0;
  b.grad_array()(0) = 0.0;
  CHECK(global_grad_norm({a, b}) == doctest::Approx(10.0));
  clip_gradients({a, b}, 5.0);
  CHECK(global_grad_norm({a, b}) == doctest::Approx(5.0).epsilon(1e-12));
  clip_gradients({a, b}, 5.0);  // already within bounds: unchanged
  CHECK(global_grad_norm({a, b}) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip reproduces parameters and predictions bit-exactly") {
  Rng rng(2);
  Model model = make_model(tiny_model_config(Task::mortality, ModelKind::medfuse), rng);
  TrainConfig config;
  config.stage = Stage::finetune_fusion;
  Checkpoint ckpt = snapshot_model(model, config, 0.87, 3, default_registry().hash);
  const std::string path = "/tmp/medfuse_test_ckpt.mfck";
  save_checkpoint(ckpt, path);
  Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.best_val_auroc == 0.87);
  CHECK(loaded.epoch == 3);
  CHECK(checkpoint_registry_hash(loaded) == default_registry().hash);
  REQUIRE(loaded.params.size() == ckpt.params.size());
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    CHECK(loaded.params[i].first == ckpt.params[i].first);
    REQUIRE(loaded.params[i].second.shape() == ckpt.params[i].second.shape());
    CHECK(std::memcmp(loaded.params[i].second.data(), ckpt.params[i].second.data(),
                      sizeof(Scalar) * ckpt.params[i].second.numel()) == 0);
  }

  Model restored = model_from_checkpoint(loaded);
  DatasetSplit data = tiny_dataset(3);
  const AugmentConfig aug = scaled_augment_config(8);
  std::vector<Index> idx = {0, 1, 2};
  Rng batch_rng(0);
  Batch batch = make_batch(data.train, idx, Task::mortality, aug, AugmentMode::eval, batch_rng);
  Rng r1(0), r2(0);
  Tensor original = sigmoid(model_logits(model, batch, false, r1));
  Tensor reloaded = sigmoid(model_logits(restored, batch, false, r2));
  CHECK(std::memcmp(original.data(), reloaded.data(), sizeof(Scalar) * original.numel()) == 0);

  CHECK_THROWS_AS(load_checkpoint("/tmp/no_such_checkpoint.mfck"), IoError);
}

TEST_CASE("select_finetune_instances honors the sampling contract") {
  DatasetSplit data = tiny_dataset(4, 60, 0.5);
  Index paired = 0, unimodal = 0;
  for (const MultimodalInstance& inst : data.train) (inst.is_paired ? paired : unimodal) += 1;

  const auto none = select_finetune_instances(data.train, TrainSet::partial, 0.0, 9);
  CHECK(static_cast<Index>(none.size()) == paired);
  for (Index i : none) CHECK(data.train[static_cast<std::size_t>(i)].is_paired);

  const auto all = select_finetune_instances(data.train, TrainSet::partial, 1.0, 9);
  CHECK(static_cast<Index>(all.size()) == paired + unimodal);

  const auto half = select_finetune_instances(data.train, TrainSet::partial, 0.5, 9);
  CHECK(static_cast<Index>(half.size()) ==
        paired + static_cast<Index>(std::llround(0.5 * static_cast<Scalar>(unimodal))));

  const auto paired_only = select_finetune_instances(data.train, TrainSet::paired, 1.0, 9);
  CHECK(static_cast<Index>(paired_only.size()) == paired);

  // Seeded subsampling is deterministic.
  CHECK(select_finetune_instances(data.train, TrainSet::partial, 0.5, 9) == half);
}

TEST_CASE("run_stage: patience 0 stops after exactly one epoch") {
  DatasetSplit data = tiny_dataset(5);
  Rng rng(6);
  Model model = make_model(tiny_model_config(Task::mortality, ModelKind::lstm_uni), rng);
  TrainConfig config;
  config.stage = Stage::pretrain_ehr;
  config.patience = 0;
  config.max_epochs = 50;
  config.batch_size = 8;
  StageResult result = run_stage(config, model, data, default_registry().hash);
  CHECK(result.epochs_run == 1);
}

TEST_CASE("run_stage rejects an empty split") {
  DatasetSplit data = tiny_dataset(7);
  data.train.clear();
  Rng rng(8);
  Model model = make_model(tiny_model_config(Task::mortality, ModelKind::lstm_uni), rng);
  TrainConfig config;
  config.stage = Stage::pretrain_ehr;
  CHECK_THROWS_AS(run_stage(config, model, data, ""), ValidationError);
}

TEST_CASE("run_stage reports divergence on non-finite parameters") {
  DatasetSplit data = tiny_dataset(9);
  Rng rng(10);
  Model model = make_model(tiny_model_config(Task::mortality, ModelKind::lstm_uni), rng);
  model.ehr_head.linear.weight.data()[0] = std::numeric_limits<Scalar>::quiet_NaN();
  TrainConfig config;
  config.stage = Stage::pretrain_ehr;
  config.batch_size = 8;
  CHECK_THROWS_AS(run_stage(config, model, data, ""), DivergenceError);
}

TEST_CASE("run_stage keeps the best-validation checkpoint, not the last") {
  DatasetSplit data = tiny_dataset(11);
  Rng rng(12);
  Model model = make_model(tiny_model_config(Task::mortality, ModelKind::lstm_uni), rng);
  TrainConfig config;
  config.stage = Stage::pretrain_ehr;
  config.max_epochs = 4;
  config.patience = 10;
  config.batch_size = 8;
  config.learning_rate = 3e-3;
  StageResult result = run_stage(config, model, data, default_registry().hash);
  Scalar best = -1.0;
  Index best_epoch = 0;
  for (std::size_t e = 0; e < result.epoch_val_auroc.size(); ++e) {
    if (result.epoch_val_auroc[e] > best) {
      best = result.epoch_val_auroc[e];
      best_epoch = static_cast<Index>(e);
    }
  }
  CHECK(result.best.best_val_auroc == best);
  CHECK(result.best_epoch == best_epoch);
  CHECK(result.best.epoch == best_epoch);
}

TEST_CASE("learning-rate search samples the documented range and reproduces") {
  DatasetSplit data = tiny_dataset(13);
  TrainConfig base;
  base.stage = Stage::pretrain_ehr;
  base.max_epochs = 1;
  base.patience = 0;
  base.batch_size = 8;
  const ModelConfig config = tiny_model_config(Task::mortality, ModelKind::lstm_uni);
  auto factory = [&](std::uint64_t seed) {
    Rng rng(seed);
    return make_model(config, rng);
  };
  Rng search_rng(14);
  LrSearchResult result =
      search_learning_rate(5, search_rng, base, data, default_registry().hash, factory);
  CHECK(result.runs.size() == 5);
  for (const LrRun& run : result.runs) {
    CHECK(run.learning_rate >= base.lr_search_min);
    CHECK(run.learning_rate <= base.lr_search_max);
  }
  Scalar best = -1.0;
  for (const LrRun& run : result.runs) best = std::max(best, run.val_auroc);
  CHECK(result.best.best_val_auroc == best);

  Rng rng2(14);
  LrSearchResult again =
      search_learning_rate(5, rng2, base, data, default_registry().hash, factory);
  CHECK(again.best_lr == result.best_lr);
  CHECK(again.best.best_val_auroc == result.best.best_val_auroc);

  Rng rng3(15);
  LrSearchResult single =
      search_learning_rate(1, rng3, base, data, default_registry().hash, factory);
  CHECK(single.runs.size() == 1);
  CHECK(single.best_lr == single.runs[0].learning_rate);
}

TEST_CASE("config defaults and JSON round trip") {
  TrainConfig fresh;
  CHECK(fresh.batch_size == 16);
  CHECK(fresh.max_epochs == 50);
  CHECK(fresh.patience == 15);
  CHECK(fresh.lr_search_min == 1e-5);
  CHECK(fresh.lr_search_max == 1e-3);

  TrainConfig config;
  config.learning_rate = 3.3e-4;
  config.stage = Stage::pretrain_cxr;
  config.unimodal_fraction = 0.25;
  config.train_set = TrainSet::paired;
  config.missing_vector_mode = MissingVectorMode::zeros;
  config.seed = 99;
  TrainConfig round = train_config_from_json(train_config_to_json(config));
  CHECK(round.learning_rate == config.learning_rate);
  CHECK(round.stage == config.stage);
  CHECK(round.unimodal_fraction == config.unimodal_fraction);
  CHECK(round.train_set == config.train_set);
  CHECK(round.missing_vector_mode == config.missing_vector_mode);
  CHECK(round.seed == config.seed);

  nlohmann::ordered_json bad = train_config_to_json(config);
  bad["unimodal_fraction"] = 1.5;
  CHECK_THROWS_AS(train_config_from_json(bad), ValidationError);
}

TEST_CASE("fine-tuning on separable synthetic data reaches val AUROC 0.9") {
  SyntheticConfig cfg;
  cfg.n_subjects = 600;
  cfg.missing_image_rate = 0.4;
  cfg.cross_modal_signal = 0.9;
  cfg.image_resolution = 16;
  cfg.label_noise = 0.1;
  cfg.seed = 31;
  DatasetSplit data = generate_synthetic(cfg, default_registry());

  ModelConfig model_cfg = tiny_model_config(Task::mortality, ModelKind::medfuse);
  model_cfg.cxr.input_resolution = 16;
  model_cfg.cxr.stage_widths = {4, 8};
  model_cfg.cxr.feature_dim = 16;
  Rng rng(32);
  Model model = make_model(model_cfg, rng);
  TrainConfig pre;
  pre.stage = Stage::pretrain_ehr;
  pre.max_epochs = 4;
  pre.patience = 3;
  pre.learning_rate = 3e-3;
  pre.seed = 33;
  run_stage(pre, model, data, default_registry().hash);
  TrainConfig pre_img = pre;
  pre_img.stage = Stage::pretrain_cxr;
  pre_img.seed = 35;
  run_stage(pre_img, model, data, default_registry().hash);
  TrainConfig fin;
  fin.stage = Stage::finetune_fusion;
  fin.max_epochs = 12;
  fin.patience = 6;
  fin.learning_rate = 2e-3;
  fin.seed = 34;
  StageResult result = run_stage(fin, model, data, default_registry().hash);
  CHECK(result.best.best_val_auroc >= 0.9);
  CHECK(result.epochs_run <= 50);
}

TEST_CASE("ensemble routing matches its members") {
  Rng rng(40);
  const ModelConfig uni_cfg = tiny_model_config(Task::mortality, ModelKind::lstm_uni);
  const ModelConfig fused_cfg = tiny_model_config(Task::mortality, ModelKind::medfuse);
  Model uni = make_model(uni_cfg, rng);
  Model fused = make_model(fused_cfg, rng);
  DatasetSplit data = tiny_dataset(41, 40, 0.5);
  EvalOptions options;
  options.augment = scaled_augment_config(8);

  std::vector<MultimodalInstance> paired, missing;
  for (const MultimodalInstance& inst : data.test) {
    (inst.is_paired ? paired : missing).push_back(inst);
  }
  REQUIRE(!paired.empty());
  REQUIRE(!missing.empty());

  Tensor all_paired = ensemble_predict(uni, fused, paired, options);
  Tensor fused_only = predict_scores(fused, paired, options);
  CHECK(std::memcmp(all_paired.data(), fused_only.data(),
                    sizeof(Scalar) * all_paired.numel()) == 0);

  Tensor all_missing = ensemble_predict(uni, fused, missing, options);
  Tensor uni_only = predict_scores(uni, missing, options);
  CHECK(std::memcmp(all_missing.data(), uni_only.data(),
                    sizeof(Scalar) * all_missing.numel()) == 0);

  // Mixed batch keeps input order.
  Tensor mixed = ensemble_predict(uni, fused, data.test, options);
  Index pi = 0, mi = 0;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    if (data.test[i].is_paired) {
      CHECK(mixed.at(static_cast<Index>(i), 0) == fused_only.at(pi++, 0));
    } else {
      CHECK(mixed.at(static_cast<Index>(i), 0) == uni_only.at(mi++, 0));
    }
  }

  Model wrong_task = make_model(tiny_model_config(Task::phenotyping, ModelKind::lstm_uni), rng);
  CHECK_THROWS_AS(ensemble_predict(wrong_task, fused, data.test, options), ValidationError);
}

}  // TEST_SUITE

#include "medfuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace medfuse {

using ordered_json = nlohmann::ordered_json;

std::string train_set_name(TrainSet set) {
  return set == TrainSet::paired ? "paired" : "partial";
}

TrainSet train_set_from_name(const std::string& name) {
  if (name == "paired") return TrainSet::paired;
  if (name == "partial") return TrainSet::partial;
  throw ValidationError("unknown train set '" + name + "' (expected paired or partial)");
}

ordered_json train_config_to_json(const TrainConfig& c) {
  ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["stage"] = stage_name(c.stage);
  j["train_set"] = train_set_name(c.train_set);
  j["unimodal_fraction"] = c.unimodal_fraction;
  j["missing_vector_mode"] = missing_mode_name(c.missing_vector_mode);
  j["seed"] = c.seed;
  j["lr_search_min"] = c.lr_search_min;
  j["lr_search_max"] = c.lr_search_max;
  j["pretrained_init"] = c.pretrained_init;
  j["grad_clip_norm"] = c.grad_clip_norm;
  return j;
}

TrainConfig train_config_from_json(const ordered_json& j) {
  TrainConfig c;
  if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<Scalar>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<Index>();
  if (j.contains("max_epochs")) c.max_epochs = j.at("max_epochs").get<Index>();
  if (j.contains("patience")) c.patience = j.at("patience").get<Index>();
  if (j.contains("stage")) c.stage = stage_from_name(j.at("stage").get<std::string>());
  if (j.contains("train_set")) c.train_set = train_set_from_name(j.at("train_set").get<std::string>());
  if (j.contains("unimodal_fraction")) c.unimodal_fraction = j.at("unimodal_fraction").get<Scalar>();
  if (j.contains("missing_vector_mode")) {
    c.missing_vector_mode = missing_mode_from_name(j.at("missing_vector_mode").get<std::string>());
  }
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("lr_search_min")) c.lr_search_min = j.at("lr_search_min").get<Scalar>();
  if (j.contains("lr_search_max")) c.lr_search_max = j.at("lr_search_max").get<Scalar>();
  if (j.contains("pretrained_init")) c.pretrained_init = j.at("pretrained_init").get<bool>();
  if (j.contains("grad_clip_norm")) c.grad_clip_norm = j.at("grad_clip_norm").get<Scalar>();
  if (j.contains("verbose")) c.verbose = j.at("verbose").get<bool>();
  if (c.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (c.max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (c.patience < 0) throw ValidationError("patience must be >= 0");
  if (c.unimodal_fraction < 0.0 || c.unimodal_fraction > 1.0) {
    throw ValidationError("unimodal_fraction must lie in [0, 1]");
  }
  return c;
}

ordered_json model_config_to_json(const ModelConfig& c) {
  ordered_json j;
  j["task"] = task_name(c.task);
  j["kind"] = model_kind_name(c.kind);
  j["ehr_feature_dim"] = c.ehr_feature_dim;
  j["ehr_hidden_dim"] = c.ehr_hidden_dim;
  j["ehr_layers"] = c.ehr_layers;
  j["ehr_dropout"] = c.ehr_dropout;
  j["cxr_in_channels"] = c.cxr.in_channels;
  j["cxr_input_resolution"] = c.cxr.input_resolution;
  j["cxr_stage_widths"] = c.cxr.stage_widths;
  j["cxr_blocks_per_stage"] = c.cxr.blocks_per_stage;
  j["cxr_kernel_size"] = c.cxr.kernel_size;
  j["cxr_feature_dim"] = c.cxr.feature_dim;
  j["fusion_hidden_dim"] = c.fusion_hidden_dim;
  j["missing_mode"] = missing_mode_name(c.missing_mode);
  return j;
}

ModelConfig model_config_from_json(const ordered_json& j) {
  ModelConfig c;
  c.task = task_from_name(j.at("task").get<std::string>());
  c.kind = model_kind_from_name(j.at("kind").get<std::string>());
  c.ehr_feature_dim = j.at("ehr_feature_dim").get<Index>();
  c.ehr_hidden_dim = j.at("ehr_hidden_dim").get<Index>();
  c.ehr_layers = j.at("ehr_layers").get<Index>();
  c.ehr_dropout = j.at("ehr_dropout").get<Scalar>();
  c.cxr.in_channels = j.at("cxr_in_channels").get<Index>();
  c.cxr.input_resolution = j.at("cxr_input_resolution").get<Index>();
  c.cxr.stage_widths = j.at("cxr_stage_widths").get<std::vector<Index>>();
  c.cxr.blocks_per_stage = j.at("cxr_blocks_per_stage").get<Index>();
  c.cxr.kernel_size = j.at("cxr_kernel_size").get<Index>();
  c.cxr.feature_dim = j.at("cxr_feature_dim").get<Index>();
  c.fusion_hidden_dim = j.at("fusion_hidden_dim").get<Index>();
  c.missing_mode = missing_mode_from_name(j.at("missing_mode").get<std::string>());
  return c;
}

// ---------------------------------------------------------------------------
// Adam

AdamState::AdamState(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.push_back(ArrayXs::Zero(p.numel()));
    v_.push_back(ArrayXs::Zero(p.numel()));
  }
}

void AdamState::step(Scalar learning_rate) {
  ++t_;
  const Scalar bc1 = 1.0 - std::pow(config_.beta1, static_cast<Scalar>(t_));
  const Scalar bc2 = 1.0 - std::pow(config_.beta2, static_cast<Scalar>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) {
      throw ContractError("adam step: missing gradient on a trainable parameter of shape " +
                          shape_string(p.shape()));
    }
    ConstArrMap g(p.grad_data(), p.numel());
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.square();
    const ArrayXs m_hat = m_[i] / bc1;
    const ArrayXs v_hat = v_[i] / bc2;
    p.array() -= learning_rate * m_hat / (v_hat.sqrt() + config_.epsilon);
  }
}

void zero_gradients(const std::vector<Tensor>& params) {
  for (const Tensor& p : params) {
    Tensor t = p;
    t.ensure_grad();
    t.zero_grad();
  }
}

Scalar global_grad_norm(const std::vector<Tensor>& params) {
  Scalar total = 0.0;
  for (const Tensor& p : params) {
    if (p.has_grad()) total += p.grad_array().square().sum();
  }
  return std::sqrt(total);
}

void clip_gradients(const std::vector<Tensor>& params, Scalar max_norm) {
  const Scalar norm = global_grad_norm(params);
  if (norm <= max_norm || norm == 0.0) return;
  const Scalar factor = max_norm / norm;
  for (const Tensor& p : params) {
    if (p.has_grad()) {
      Tensor t = p;
      t.grad_array() *= factor;
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[5] = {'M', 'F', 'C', 'K', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
  out.write(b, 8);
}

void put_f64(std::ostream& out, Scalar v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw IoError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

Scalar get_f64(std::istream& in) {
  const std::uint64_t bits = get_u64(in);
  Scalar v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

}  // namespace

Checkpoint snapshot_model(const Model& model, const TrainConfig& config, Scalar val_auroc,
                          Index epoch, const std::string& registry_hash) {
  Checkpoint ckpt;
  ckpt.config["model"] = model_config_to_json(model.config);
  ckpt.config["train"] = train_config_to_json(config);
  ckpt.config["registry_hash"] = registry_hash;
  ckpt.best_val_auroc = val_auroc;
  ckpt.epoch = epoch;
  for (const auto& [name, tensor] : named_parameters(model)) {
    ckpt.params.emplace_back(name, tensor.clone());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(out, static_cast<std::uint32_t>(ckpt.version));
  const std::string config = ckpt.config.dump();
  put_u64(out, config.size());
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  put_f64(out, ckpt.best_val_auroc);
  put_u32(out, static_cast<std::uint32_t>(ckpt.epoch));
  put_u64(out, ckpt.params.size());
  for (const auto& [name, tensor] : ckpt.params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (Index d : tensor.shape()) put_u64(out, static_cast<std::uint64_t>(d));
    for (Index i = 0; i < tensor.numel(); ++i) put_f64(out, tensor.data()[i]);
  }
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, kCheckpointMagic, 5) != 0) {
    throw IoError("bad checkpoint magic in " + path);
  }
  Checkpoint ckpt;
  ckpt.version = static_cast<int>(get_u32(in));
  if (ckpt.version != 1) {
    throw IoError("unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  const std::uint64_t config_len = get_u64(in);
  std::string config(config_len, '\0');
  in.read(config.data(), static_cast<std::streamsize>(config_len));
  if (!in) throw IoError("truncated checkpoint: " + path);
  try {
    ckpt.config = ordered_json::parse(config);
  } catch (const std::exception& e) {
    throw IoError("bad checkpoint config JSON: " + std::string(e.what()));
  }
  ckpt.best_val_auroc = get_f64(in);
  ckpt.epoch = static_cast<Index>(get_u32(in));
  const std::uint64_t n_params = get_u64(in);
  for (std::uint64_t i = 0; i < n_params; ++i) {
    const std::uint32_t name_len = get_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t rank = get_u32(in);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<Index>(get_u64(in)));
    Tensor t(shape);
    for (Index k = 0; k < t.numel(); ++k) t.data()[k] = get_f64(in);
    if (!in) throw IoError("truncated checkpoint: " + path);
    ckpt.params.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

void load_parameters(Model& model, const Checkpoint& ckpt,
                     const std::vector<std::string>& prefixes) {
  auto targets = named_parameters(model);
  auto selected = [&](const std::string& name) {
    if (prefixes.empty()) return true;
    for (const std::string& prefix : prefixes) {
      if (name.rfind(prefix, 0) == 0) return true;
    }
    return false;
  };
  for (const auto& [name, stored] : ckpt.params) {
    if (!selected(name)) continue;
    bool found = false;
    for (auto& [target_name, target] : targets) {
      if (target_name == name) {
        if (target.shape() != stored.shape()) {
          throw ValidationError("checkpoint parameter '" + name + "' has shape " +
                                shape_string(stored.shape()) + ", model expects " +
                                shape_string(target.shape()));
        }
        target.array() = stored.array();
        found = true;
        break;
      }
    }
    if (!found) throw ValidationError("checkpoint parameter '" + name + "' not in model");
  }
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  const ModelConfig config = model_config_from_json(ckpt.config.at("model"));
  Rng rng(0);
  Model model = make_model(config, rng);
  load_parameters(model, ckpt);
  return model;
}

std::string checkpoint_registry_hash(const Checkpoint& ckpt) {
  return ckpt.config.value("registry_hash", std::string());
}

// ---------------------------------------------------------------------------
// Stage training

std::vector<Index> select_finetune_instances(const std::vector<MultimodalInstance>& instances,
                                             TrainSet train_set, Scalar unimodal_fraction,
                                             std::uint64_t seed) {
  std::vector<Index> paired, unimodal;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    (instances[i].is_paired ? paired : unimodal).push_back(static_cast<Index>(i));
  }
  if (train_set == TrainSet::paired) return paired;
  Rng rng = Rng(seed).derive(0x55BB1EULL);
  rng.shuffle(unimodal);
  const Index keep = static_cast<Index>(
      std::llround(unimodal_fraction * static_cast<Scalar>(unimodal.size())));
  unimodal.resize(static_cast<std::size_t>(std::min<Index>(keep, static_cast<Index>(unimodal.size()))));
  std::vector<Index> out = paired;
  out.insert(out.end(), unimodal.begin(), unimodal.end());
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

std::vector<Index> select_stage_indices(const TrainConfig& config,
                                        const std::vector<MultimodalInstance>& instances,
                                        bool is_train) {
  std::vector<Index> out;
  switch (config.stage) {
    case Stage::pretrain_cxr:
      for (std::size_t i = 0; i < instances.size(); ++i) {
        if (instances[i].is_paired) out.push_back(static_cast<Index>(i));
      }
      return out;
    case Stage::pretrain_ehr:
      if (config.train_set == TrainSet::paired) {
        for (std::size_t i = 0; i < instances.size(); ++i) {
          if (instances[i].is_paired) out.push_back(static_cast<Index>(i));
        }
        return out;
      }
      for (std::size_t i = 0; i < instances.size(); ++i) out.push_back(static_cast<Index>(i));
      return out;
    default:
      if (is_train) {
        return select_finetune_instances(instances, config.train_set, config.unimodal_fraction,
                                         config.seed);
      }
      // Validation matches the training regime without subsampling.
      if (config.train_set == TrainSet::paired) {
        for (std::size_t i = 0; i < instances.size(); ++i) {
          if (instances[i].is_paired) out.push_back(static_cast<Index>(i));
        }
        return out;
      }
      for (std::size_t i = 0; i < instances.size(); ++i) out.push_back(static_cast<Index>(i));
      return out;
  }
}

// Fine-tuning always trains against the task labels; the fusion targets are
// the clinical-stream targets by definition.
void check_fusion_targets(const Batch& batch, const std::vector<MultimodalInstance>& instances,
                          const std::vector<Index>& indices) {
  for (Index row = 0; row < batch.size; ++row) {
    const MultimodalInstance& inst = instances[static_cast<std::size_t>(indices[static_cast<std::size_t>(row)])];
    for (Index l = 0; l < batch.y.cols(); ++l) {
      if (batch.y.at(row, l) != inst.y_task.data()[l]) {
        throw ContractError("fusion targets diverged from task labels");
      }
    }
  }
}

}  // namespace

StageResult run_stage(const TrainConfig& config, Model& model, const DatasetSplit& split,
                      const std::string& registry_hash) {
  const std::vector<Index> train_indices = select_stage_indices(config, split.train, true);
  const std::vector<Index> val_indices = select_stage_indices(config, split.val, false);
  if (train_indices.empty()) {
    throw ValidationError("run_stage: no training instances for stage " +
                          stage_name(config.stage));
  }
  if (val_indices.empty()) {
    throw ValidationError("run_stage: no validation instances for stage " +
                          stage_name(config.stage));
  }
  std::vector<MultimodalInstance> val_instances;
  val_instances.reserve(val_indices.size());
  for (Index i : val_indices) val_instances.push_back(split.val[static_cast<std::size_t>(i)]);

  if (model.concat) model.concat->mode = config.missing_vector_mode;
  const std::vector<Tensor> trainable = trainable_parameters(model, config.stage);
  if (trainable.empty()) throw ValidationError("run_stage: no trainable parameters");
  AdamState optimizer(trainable);

  const AugmentConfig augment = scaled_augment_config(model.config.cxr.input_resolution);
  EvalOptions eval_options;
  eval_options.batch_size = config.batch_size;
  eval_options.augment = augment;

  const Rng master(config.seed);
  StageResult result;
  Scalar best_auroc = -1.0;

  for (Index epoch = 0; epoch < config.max_epochs; ++epoch) {
    // Mini-batch order and dropout are reseeded per epoch from the master
    // seed, so a run is a pure function of its config.
    Rng epoch_rng = master.derive(0xE40C000ULL + static_cast<std::uint64_t>(epoch));
    std::vector<Index> order = train_indices;
    epoch_rng.shuffle(order);

    Scalar epoch_loss = 0.0;
    Index n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::vector<Index> batch_indices(order.begin() + static_cast<std::ptrdiff_t>(start),
                                             order.begin() + static_cast<std::ptrdiff_t>(end));
      const Batch batch = make_batch(split.train, batch_indices, model.config.task, augment,
                                     AugmentMode::train, epoch_rng);
      if (config.stage == Stage::finetune_fusion) {
        check_fusion_targets(batch, split.train, batch_indices);
      }
      Tape tape;
      Scalar loss_value;
      {
        TapeScope scope(tape);
        Tensor logits = stage_logits(model, config.stage, batch, /*training=*/true, epoch_rng);
        for (Index i = 0; i < logits.numel(); ++i) {
          if (!std::isfinite(logits.data()[i])) {
            throw DivergenceError("non-finite logits at epoch " + std::to_string(epoch) +
                                  ", stage " + stage_name(config.stage) + ", lr " +
                                  std::to_string(config.learning_rate));
          }
        }
        Tensor loss = bce_loss(stage_targets(model, config.stage, batch), logits);
        loss_value = loss.value();
        if (!std::isfinite(loss_value)) {
          throw DivergenceError("training loss is not finite at epoch " + std::to_string(epoch) +
                                ", stage " + stage_name(config.stage) + ", lr " +
                                std::to_string(config.learning_rate));
        }
        zero_gradients(trainable);
        tape.backward(loss);
      }
      clip_gradients(trainable, config.grad_clip_norm);
      optimizer.step(config.learning_rate);
      epoch_loss += loss_value;
      ++n_batches;
    }
    result.epoch_train_loss.push_back(epoch_loss / static_cast<Scalar>(n_batches));

    const Scalar val_auroc = validation_auroc(model, config.stage, val_instances, eval_options);
    result.epoch_val_auroc.push_back(val_auroc);
    result.epochs_run = epoch + 1;
    if (config.verbose) {
      std::fprintf(stderr, "[%s] epoch %lld loss %.4f val auroc %.4f\n",
                   stage_name(config.stage).c_str(), static_cast<long long>(epoch),
                   result.epoch_train_loss.back(), val_auroc);
    }
    if (val_auroc > best_auroc) {
      best_auroc = val_auroc;
      result.best_epoch = epoch;
      result.best = snapshot_model(model, config, val_auroc, epoch, registry_hash);
    }
    if (epoch - result.best_epoch >= config.patience) break;
  }
  // Leave the model at its best-validation parameters.
  load_parameters(model, result.best);
  return result;
}

LrSearchResult search_learning_rate(Index n_runs, Rng& rng, const TrainConfig& base,
                                    const DatasetSplit& split, const std::string& registry_hash,
                                    const std::function<Model(std::uint64_t)>& factory) {
  if (n_runs < 1) throw ValidationError("search_learning_rate needs n_runs >= 1");
  LrSearchResult result;
  Scalar best_auroc = -1.0;
  for (Index run = 0; run < n_runs; ++run) {
    const Scalar lr =
        std::exp(rng.uniform(std::log(base.lr_search_min), std::log(base.lr_search_max)));
    TrainConfig config = base;
    config.learning_rate = lr;
    Model model = factory(rng.derive(static_cast<std::uint64_t>(run)).seed());
    const StageResult stage = run_stage(config, model, split, registry_hash);
    result.runs.push_back({lr, stage.best.best_val_auroc});
    if (stage.best.best_val_auroc > best_auroc) {
      best_auroc = stage.best.best_val_auroc;
      result.best_lr = lr;
      result.best = stage.best;
    }
  }
  return result;
}

}  // namespace medfuse

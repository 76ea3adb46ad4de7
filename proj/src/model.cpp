#include "medfuse/model.hpp"

namespace medfuse {

std::string model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::lstm_uni: return "lstm_uni";
    case ModelKind::medfuse: return "medfuse";
    case ModelKind::early_fusion: return "early";
    default: return "joint";
  }
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "lstm_uni") return ModelKind::lstm_uni;
  if (name == "medfuse") return ModelKind::medfuse;
  if (name == "early") return ModelKind::early_fusion;
  if (name == "joint") return ModelKind::joint_fusion;
  throw ValidationError("unknown model '" + name +
                        "' (expected lstm_uni, medfuse, early or joint)");
}

std::string stage_name(Stage stage) {
  switch (stage) {
    case Stage::pretrain_ehr: return "pretrain_ehr";
    case Stage::pretrain_cxr: return "pretrain_cxr";
    default: return "finetune_fusion";
  }
}

Stage stage_from_name(const std::string& name) {
  if (name == "pretrain_ehr") return Stage::pretrain_ehr;
  if (name == "pretrain_cxr") return Stage::pretrain_cxr;
  if (name == "finetune_fusion") return Stage::finetune_fusion;
  throw ValidationError("unknown stage '" + name + "'");
}

Model make_model(const ModelConfig& config, Rng& rng) {
  Model m;
  m.config = config;
  const Index n_labels = label_count(config.task);
  m.ehr = make_ehr_encoder(config.ehr_feature_dim, config.ehr_hidden_dim, config.ehr_layers,
                           config.ehr_dropout, rng);
  m.ehr_head = make_classifier(config.ehr_hidden_dim, n_labels, rng);
  if (config.kind != ModelKind::lstm_uni) {
    m.cxr = make_cxr_encoder(config.cxr, rng);
    m.cxr_head = make_classifier(config.cxr.feature_dim, kCxrLabelCount, rng);
    if (config.kind == ModelKind::medfuse) {
      m.fusion = make_fusion(config.cxr.feature_dim, config.ehr_hidden_dim,
                             config.fusion_hidden_dim, n_labels, rng);
    } else {
      m.concat = make_concat_fusion(config.cxr.feature_dim, config.ehr_hidden_dim,
                                    config.fusion_hidden_dim, n_labels, config.missing_mode, rng);
    }
  }
  return m;
}

namespace {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void add_lstm(NamedTensors& out, const std::string& prefix, const LstmCellParams& cell) {
  out.emplace_back(prefix + ".w_ih", cell.w_ih);
  out.emplace_back(prefix + ".w_hh", cell.w_hh);
  out.emplace_back(prefix + ".bias", cell.bias);
}

void add_linear(NamedTensors& out, const std::string& prefix, const LinearParams& linear) {
  out.emplace_back(prefix + ".weight", linear.weight);
  out.emplace_back(prefix + ".bias", linear.bias);
}

void add_conv(NamedTensors& out, const std::string& prefix, const ConvBlockParams& block) {
  out.emplace_back(prefix + ".kernels", block.kernels);
  out.emplace_back(prefix + ".bias", block.bias);
  if (block.shortcut_kernels.defined()) {
    out.emplace_back(prefix + ".shortcut_kernels", block.shortcut_kernels);
    out.emplace_back(prefix + ".shortcut_bias", block.shortcut_bias);
  }
}

}  // namespace

NamedTensors named_parameters(const Model& model) {
  NamedTensors out;
  for (std::size_t l = 0; l < model.ehr.lstm_layers.size(); ++l) {
    add_lstm(out, "ehr.lstm" + std::to_string(l), model.ehr.lstm_layers[l]);
  }
  add_linear(out, "ehr_head", model.ehr_head.linear);
  if (model.cxr) {
    add_conv(out, "cxr.stem", model.cxr->stem);
    for (std::size_t b = 0; b < model.cxr->blocks.size(); ++b) {
      add_conv(out, "cxr.block" + std::to_string(b), model.cxr->blocks[b]);
    }
    add_linear(out, "cxr.head", model.cxr->head);
  }
  if (model.cxr_head) add_linear(out, "cxr_head", model.cxr_head->linear);
  if (model.fusion) {
    add_linear(out, "fusion.projection", model.fusion->projection);
    add_lstm(out, "fusion.lstm", model.fusion->fusion_lstm);
    add_linear(out, "fusion.classifier", model.fusion->classifier.linear);
  }
  if (model.concat) {
    add_linear(out, "concat.projection", model.concat->projection);
    add_linear(out, "concat.head_hidden", model.concat->head_hidden);
    add_linear(out, "concat.head_out", model.concat->head_out);
    out.emplace_back("concat.missing_vector", model.concat->missing_vector);
  }
  return out;
}

std::vector<Tensor> trainable_parameters(const Model& model, Stage stage) {
  std::vector<Tensor> out;
  auto add_if = [&](const std::string& name, const Tensor& t) {
    (void)name;
    if (t.requires_grad()) out.push_back(t);
  };
  const NamedTensors all = named_parameters(model);
  auto add_prefix = [&](const std::string& prefix) {
    for (const auto& [name, tensor] : all) {
      if (name.rfind(prefix, 0) == 0) add_if(name, tensor);
    }
  };
  switch (stage) {
    case Stage::pretrain_ehr:
      add_prefix("ehr.");
      add_prefix("ehr_head");
      break;
    case Stage::pretrain_cxr:
      add_prefix("cxr.");
      add_prefix("cxr_head");
      break;
    case Stage::finetune_fusion:
      if (model.config.kind == ModelKind::medfuse) {
        add_prefix("ehr.");
        add_prefix("cxr.");
        add_prefix("fusion.");
      } else if (model.config.kind == ModelKind::joint_fusion) {
        add_prefix("ehr.");
        add_prefix("cxr.");
        add_prefix("concat.");
      } else if (model.config.kind == ModelKind::early_fusion) {
        // Frozen encoders: only projection, head and missing vector learn.
        add_prefix("concat.");
      } else {
        add_prefix("ehr.");
        add_prefix("ehr_head");
      }
      break;
  }
  return out;
}

void freeze_encoders(Model& model) {
  for (LstmCellParams& cell : model.ehr.lstm_layers) {
    cell.w_ih.set_requires_grad(false);
    cell.w_hh.set_requires_grad(false);
    cell.bias.set_requires_grad(false);
  }
  if (model.cxr) {
    auto freeze_block = [](ConvBlockParams& block) {
      block.kernels.set_requires_grad(false);
      block.bias.set_requires_grad(false);
      if (block.shortcut_kernels.defined()) {
        block.shortcut_kernels.set_requires_grad(false);
        block.shortcut_bias.set_requires_grad(false);
      }
    };
    freeze_block(model.cxr->stem);
    for (ConvBlockParams& block : model.cxr->blocks) freeze_block(block);
    model.cxr->head.weight.set_requires_grad(false);
    model.cxr->head.bias.set_requires_grad(false);
  }
}

Tensor model_logits(const Model& model, const Batch& batch, bool training, Rng& rng) {
  switch (model.config.kind) {
    case ModelKind::lstm_uni:
      return classify_logits(model.ehr_head, encode_ehr(model.ehr, batch.x_ehr, training, rng));
    case ModelKind::medfuse:
      return medfuse_forward_logits(model.ehr, *model.cxr, *model.fusion, batch, training, rng);
    default:
      return concat_fusion_forward_logits(model.ehr, *model.cxr, *model.concat, batch, training,
                                          rng);
  }
}

Tensor stage_logits(const Model& model, Stage stage, const Batch& batch, bool training,
                    Rng& rng) {
  switch (stage) {
    case Stage::pretrain_ehr:
      return classify_logits(model.ehr_head, encode_ehr(model.ehr, batch.x_ehr, training, rng));
    case Stage::pretrain_cxr: {
      if (!model.cxr || !model.cxr_head) {
        throw ValidationError("pretrain_cxr requires an image encoder");
      }
      if (!batch.x_cxr.defined()) {
        throw ValidationError("pretrain_cxr batch has no images");
      }
      return classify_logits(*model.cxr_head, encode_cxr(*model.cxr, batch.x_cxr, training, rng));
    }
    default:
      return model_logits(model, batch, training, rng);
  }
}

Tensor stage_targets(const Model& model, Stage stage, const Batch& batch) {
  (void)model;
  return stage == Stage::pretrain_cxr ? batch.y_cxr : batch.y;
}

}  // namespace medfuse

#include "medfuse/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace medfuse {

Index label_count(Task task) {
  return task == Task::mortality ? 1 : kPhenotypeLabelCount;
}

std::string task_name(Task task) {
  return task == Task::mortality ? "mortality" : "phenotyping";
}

Task task_from_name(const std::string& name) {
  if (name == "mortality") return Task::mortality;
  if (name == "phenotyping") return Task::phenotyping;
  throw ValidationError("unknown task '" + name + "' (expected mortality or phenotyping)");
}

const std::vector<PhenotypeLabel>& phenotype_labels() {
  static const std::vector<PhenotypeLabel> labels = {
      {"Acute and unspecified renal failure", "acute"},
      {"Acute cerebrovascular disease", "acute"},
      {"Acute myocardial infarction", "acute"},
      {"Cardiac dysrhythmias", "mixed"},
      {"Chronic kidney disease", "chronic"},
      {"Chronic obstructive pulmonary disease", "chronic"},
      {"Complications of surgical/medical care", "acute"},
      {"Conduction disorders", "mixed"},
      {"Congestive heart failure; nonhypertensive", "mixed"},
      {"Coronary atherosclerosis and related", "chronic"},
      {"Diabetes mellitus with complications", "mixed"},
      {"Diabetes mellitus without complication", "chronic"},
      {"Disorders of lipid metabolism", "chronic"},
      {"Essential hypertension", "chronic"},
      {"Fluid and electrolyte disorders", "acute"},
      {"Gastrointestinal hemorrhage", "acute"},
      {"Hypertension with complications", "chronic"},
      {"Other liver diseases", "mixed"},
      {"Other lower respiratory disease", "acute"},
      {"Other upper respiratory disease", "acute"},
      {"Pleurisy; pneumothorax; pulmonary collapse", "acute"},
      {"Pneumonia", "acute"},
      {"Respiratory failure; insufficiency; arrest", "acute"},
      {"Septicemia (except in labor)", "acute"},
      {"Shock", "acute"},
  };
  return labels;
}

// ---------------------------------------------------------------------------
// Discretization

Tensor discretize(const RawTimeSeries& raw, const VariableRegistry& registry,
                  std::optional<Scalar> horizon_hours, Scalar bin_hours) {
  if (bin_hours <= 0.0) throw ValidationError("discretize: bin_hours must be positive");
  if (horizon_hours && !(*horizon_hours > 0.0)) {
    throw ValidationError("discretize: horizon must be positive when given");
  }
  const Index n_vars = static_cast<Index>(registry.variables.size());
  Scalar max_time = 0.0;
  for (const TimedEvent& e : raw.events) {
    if (!std::isfinite(e.hours) || e.hours < 0.0) {
      throw ValidationError("discretize: event timestamp must be non-negative and finite, got " +
                            std::to_string(e.hours));
    }
    if (e.variable < 0 || e.variable >= n_vars) {
      throw ValidationError("discretize: variable index " + std::to_string(e.variable) +
                            " outside registry of " + std::to_string(n_vars));
    }
    const RegistryVariable& var = registry.variable(e.variable);
    if (var.kind == VariableKind::categorical) {
      const Scalar rounded = std::nearbyint(e.value);
      if (rounded != e.value || rounded < 0.0 ||
          rounded >= static_cast<Scalar>(var.categories.size())) {
        throw ValidationError("discretize: category code " + std::to_string(e.value) +
                              " invalid for " + var.name);
      }
    } else if (!std::isfinite(e.value)) {
      throw ValidationError("discretize: non-finite value for " + var.name);
    }
    max_time = std::max(max_time, e.hours);
  }

  Index steps;
  if (horizon_hours) {
    steps = static_cast<Index>(std::ceil(*horizon_hours / bin_hours));
  } else {
    steps = raw.events.empty() ? 1 : static_cast<Index>(std::floor(max_time / bin_hours)) + 1;
  }

  // Events in time order; stable so same-bin updates keep insertion order.
  std::vector<std::size_t> order(raw.events.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return raw.events[a].hours < raw.events[b].hours;
  });

  std::vector<Scalar> last_value(static_cast<std::size_t>(n_vars), 0.0);
  std::vector<bool> observed(static_cast<std::size_t>(n_vars), false);

  Tensor out(Shape{steps, registry.total_width});
  std::size_t cursor = 0;
  for (Index b = 0; b < steps; ++b) {
    const Scalar bin_end = static_cast<Scalar>(b + 1) * bin_hours;
    while (cursor < order.size() && raw.events[order[cursor]].hours < bin_end) {
      const TimedEvent& e = raw.events[order[cursor]];
      if (!horizon_hours || e.hours < *horizon_hours) {
        last_value[static_cast<std::size_t>(e.variable)] = e.value;
        observed[static_cast<std::size_t>(e.variable)] = true;
      }
      ++cursor;
    }
    Scalar* row = out.data() + b * registry.total_width;
    for (Index v = 0; v < n_vars; ++v) {
      const RegistryVariable& var = registry.variable(v);
      const bool seen = observed[static_cast<std::size_t>(v)];
      if (var.kind == VariableKind::continuous) {
        const Scalar value = seen ? last_value[static_cast<std::size_t>(v)] : var.normal_value;
        row[var.column_start] = (value - var.mean) / var.stddev;
      } else {
        const Index cat = seen ? static_cast<Index>(last_value[static_cast<std::size_t>(v)])
                               : var.normal_category;
        row[var.column_start + cat] = 1.0;
      }
      row[var.mask_column] = seen ? 1.0 : 0.0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Instances and splits

void validate_instance(const MultimodalInstance& instance, Task task) {
  if (!instance.x_ehr.defined() || instance.x_ehr.rank() != 2 ||
      instance.x_ehr.cols() != kFeatureWidth) {
    throw ValidationError("instance " + std::to_string(instance.instance_id) +
                          ": time-series input must be T x " + std::to_string(kFeatureWidth));
  }
  if (instance.is_paired != instance.x_cxr.defined()) {
    throw ValidationError("instance " + std::to_string(instance.instance_id) +
                          ": is_paired flag does not match image presence");
  }
  if (instance.x_cxr.defined() && instance.x_cxr.rank() != 3) {
    throw ValidationError("instance " + std::to_string(instance.instance_id) +
                          ": image must be C x H x W");
  }
  if (!instance.y_task.defined() || instance.y_task.numel() != label_count(task)) {
    throw ValidationError("instance " + std::to_string(instance.instance_id) + ": expected " +
                          std::to_string(label_count(task)) + " task labels");
  }
  if (instance.is_paired && (!instance.y_cxr.defined() || instance.y_cxr.numel() != kCxrLabelCount)) {
    throw ValidationError("instance " + std::to_string(instance.instance_id) + ": expected " +
                          std::to_string(kCxrLabelCount) + " radiology labels");
  }
}

DatasetSplit split_by_subject(const std::vector<MultimodalInstance>& instances,
                              const SplitFractions& fractions, std::uint64_t seed) {
  const Scalar total = fractions.train + fractions.val + fractions.test;
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValidationError("split fractions must sum to 1, got " + std::to_string(total));
  }
  std::vector<std::uint64_t> subjects;
  for (const MultimodalInstance& inst : instances) {
    if (std::find(subjects.begin(), subjects.end(), inst.subject_id) == subjects.end()) {
      subjects.push_back(inst.subject_id);
    }
  }
  const Index n = static_cast<Index>(subjects.size());
  const Scalar f[3] = {fractions.train, fractions.val, fractions.test};
  Index n_splits = 0;
  for (Scalar fr : f) n_splits += fr > 0.0 ? 1 : 0;
  if (n < n_splits) {
    throw ValidationError("split_by_subject: " + std::to_string(n) + " subjects cannot fill " +
                          std::to_string(n_splits) + " splits");
  }

  Rng rng(seed);
  rng.shuffle(subjects);

  // Largest-remainder allocation keeps each split within one subject of target.
  Index counts[3];
  Scalar remainders[3];
  Index assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const Scalar exact = f[i] * static_cast<Scalar>(n);
    counts[i] = static_cast<Index>(std::floor(exact));
    remainders[i] = exact - static_cast<Scalar>(counts[i]);
    assigned += counts[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i) {
      if (remainders[i] > remainders[best]) best = i;
    }
    counts[best] += 1;
    remainders[best] = -1.0;
    ++assigned;
  }

  enum { kTrain = 0, kVal = 1, kTest = 2 };
  std::vector<std::pair<std::uint64_t, int>> subject_split;
  Index offset = 0;
  for (int s = 0; s < 3; ++s) {
    for (Index i = 0; i < counts[s]; ++i) {
      subject_split.emplace_back(subjects[static_cast<std::size_t>(offset + i)], s);
    }
    offset += counts[s];
  }

  DatasetSplit out;
  out.fractions = fractions;
  auto split_of = [&](std::uint64_t subject) {
    for (const auto& [id, s] : subject_split) {
      if (id == subject) return s;
    }
    throw ContractError("subject lost during split assignment");
  };
  for (const MultimodalInstance& inst : instances) {
    switch (split_of(inst.subject_id)) {
      case kTrain: out.train.push_back(inst); break;
      case kVal: out.val.push_back(inst); break;
      default: out.test.push_back(inst); break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generation

namespace {

Scalar normal_cdf(Scalar x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

std::vector<Scalar> unit_vector(Index dim, Rng& rng) {
  std::vector<Scalar> v(static_cast<std::size_t>(dim));
  Scalar norm = 0.0;
  for (Scalar& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (Scalar& x : v) x /= norm;
  return v;
}

Scalar dot(const std::vector<Scalar>& a, const std::vector<Scalar>& b) {
  Scalar s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct GeneratorWeights {
  std::vector<std::vector<Scalar>> ehr_loadings;   // per variable, over visible dims
  std::vector<std::vector<Scalar>> task_weights;   // per task label, over all dims
  std::vector<std::vector<Scalar>> cxr_weights;    // per radiology label, over all dims
  std::vector<Scalar> task_thresholds;
  std::vector<Scalar> cxr_thresholds;
  Index visible_dims = 0;
};

GeneratorWeights make_weights(const SyntheticConfig& cfg, const VariableRegistry& registry,
                              std::uint64_t attempt_seed) {
  GeneratorWeights w;
  // The clinical stream sees the first half of the latent; the image carries
  // a correlated view of all of it.
  w.visible_dims = (cfg.latent_dim + 1) / 2;
  Rng rng = Rng(attempt_seed).derive(0xC0FFEEULL);
  for (std::size_t v = 0; v < registry.variables.size(); ++v) {
    w.ehr_loadings.push_back(unit_vector(w.visible_dims, rng));
  }
  const Index n_labels = label_count(cfg.task);
  const Scalar liability_sd = std::sqrt(1.0 + cfg.label_noise * cfg.label_noise);
  for (Index l = 0; l < n_labels; ++l) {
    if (cfg.task == Task::mortality) {
      // Equal weight on every component so the hidden half carries a fixed
      // share of the label signal regardless of seed.
      std::vector<Scalar> eq(static_cast<std::size_t>(cfg.latent_dim),
                             1.0 / std::sqrt(static_cast<Scalar>(cfg.latent_dim)));
      w.task_weights.push_back(eq);
      w.task_thresholds.push_back(inverse_normal_cdf(1.0 - cfg.prevalence) * liability_sd);
    } else {
      w.task_weights.push_back(unit_vector(cfg.latent_dim, rng));
      const Scalar prev = 0.08 + 0.37 * static_cast<Scalar>(l) /
                                     static_cast<Scalar>(n_labels - 1);
      w.task_thresholds.push_back(inverse_normal_cdf(1.0 - prev) * liability_sd);
    }
  }
  for (Index l = 0; l < kCxrLabelCount; ++l) {
    w.cxr_weights.push_back(unit_vector(cfg.latent_dim, rng));
    const Scalar prev = 0.15 + 0.30 * static_cast<Scalar>(l) /
                                   static_cast<Scalar>(kCxrLabelCount - 1);
    w.cxr_thresholds.push_back(inverse_normal_cdf(1.0 - prev) * liability_sd);
  }
  return w;
}

// Each latent component is drawn as a pair of horizontally mirrored Gaussian
// bumps at a fixed grid position, so the encoding survives random flips and
// stays readable through pooling.
Tensor render_image(const std::vector<Scalar>& z_img, Index side, Rng& rng) {
  const Index k = static_cast<Index>(z_img.size());
  const Index n_rows = (k + 1) / 2;
  const Scalar sigma = 0.09 * static_cast<Scalar>(side);
  const Scalar inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
  Tensor mono(Shape{1, side, side});
  std::vector<Scalar> cx(static_cast<std::size_t>(k)), cy(static_cast<std::size_t>(k));
  for (Index c = 0; c < k; ++c) {
    const Index row = c % n_rows;
    const Index col_group = c / n_rows;
    cy[static_cast<std::size_t>(c)] =
        (static_cast<Scalar>(row) + 0.5) / static_cast<Scalar>(n_rows) * static_cast<Scalar>(side);
    cx[static_cast<std::size_t>(c)] =
        (0.22 + 0.17 * static_cast<Scalar>(col_group)) * static_cast<Scalar>(side);
  }
  for (Index y = 0; y < side; ++y) {
    for (Index x = 0; x < side; ++x) {
      Scalar value = 0.0;
      for (Index c = 0; c < k; ++c) {
        const Scalar dy = static_cast<Scalar>(y) - cy[static_cast<std::size_t>(c)];
        const Scalar dx1 = static_cast<Scalar>(x) - cx[static_cast<std::size_t>(c)];
        const Scalar dx2 = static_cast<Scalar>(x) -
                           (static_cast<Scalar>(side - 1) - cx[static_cast<std::size_t>(c)]);
        const Scalar bumps = std::exp(-(dx1 * dx1 + dy * dy) * inv_two_sigma2) +
                             std::exp(-(dx2 * dx2 + dy * dy) * inv_two_sigma2);
        value += z_img[static_cast<std::size_t>(c)] * bumps;
      }
      mono.data()[y * side + x] = value + 0.1 * rng.normal();
    }
  }
  return replicate_channels(mono);
}

bool split_labels_usable(const std::vector<MultimodalInstance>& instances, Task task) {
  if (instances.empty()) return false;
  const Index n_labels = label_count(task);
  Index two_class = 0;
  for (Index l = 0; l < n_labels; ++l) {
    bool has_pos = false, has_neg = false;
    for (const MultimodalInstance& inst : instances) {
      if (inst.y_task.data()[l] > 0.5) has_pos = true;
      else has_neg = true;
    }
    two_class += (has_pos && has_neg) ? 1 : 0;
  }
  // Mortality needs its single label two-class; the multi-label task stays
  // usable while most labels are, since degenerate labels are skipped
  // downstream.
  return task == Task::mortality ? two_class == 1 : two_class * 2 >= n_labels;
}

}  // namespace

Index synthetic_source_resolution(Index crop_resolution) {
  return static_cast<Index>(std::lround(static_cast<Scalar>(crop_resolution) * 256.0 / 224.0));
}

Tensor replicate_channels(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw DimensionError("replicate_channels expects a 1 x H x W image, got " +
                         shape_string(image.shape()));
  }
  const Index h = image.dim(1), w = image.dim(2);
  Tensor out(Shape{3, h, w});
  for (Index c = 0; c < 3; ++c) {
    std::memcpy(out.data() + c * h * w, image.data(), sizeof(Scalar) * h * w);
  }
  return out;
}

DatasetSplit generate_synthetic(const SyntheticConfig& cfg, const VariableRegistry& registry) {
  if (cfg.missing_image_rate < 0.0 || cfg.missing_image_rate >= 1.0) {
    throw ValidationError("missing_image_rate must lie in [0, 1)");
  }
  if (cfg.cross_modal_signal < 0.0 || cfg.cross_modal_signal > 1.0) {
    throw ValidationError("cross_modal_signal must lie in [0, 1]");
  }
  if (cfg.n_subjects < 30) throw ValidationError("generate_synthetic needs n_subjects >= 30");
  if (cfg.latent_dim < 2) throw ValidationError("latent_dim must be >= 2");
  if (cfg.image_resolution < 8) throw ValidationError("image_resolution must be >= 8");
  if (!(cfg.prevalence > 0.0 && cfg.prevalence < 1.0)) {
    throw ValidationError("prevalence must lie in (0, 1)");
  }

  const Index n_labels = label_count(cfg.task);
  const Index side = synthetic_source_resolution(cfg.image_resolution);
  constexpr int kMaxAttempts = 5;

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const std::uint64_t attempt_seed = cfg.seed + static_cast<std::uint64_t>(attempt);
    const GeneratorWeights weights = make_weights(cfg, registry, attempt_seed);
    const Rng base(attempt_seed);

    std::vector<MultimodalInstance> instances;
    instances.reserve(static_cast<std::size_t>(cfg.n_subjects));
    for (Index s = 0; s < cfg.n_subjects; ++s) {
      Rng rng = base.derive(1000 + static_cast<std::uint64_t>(s));
      MultimodalInstance inst;
      inst.instance_id = static_cast<std::uint64_t>(s);
      inst.subject_id = static_cast<std::uint64_t>(s);
      inst.age = std::floor(rng.uniform(18.0, 95.0));

      std::vector<Scalar> z(static_cast<std::size_t>(cfg.latent_dim));
      for (Scalar& x : z) x = rng.normal();
      inst.latent = z;
      std::vector<Scalar> z_img(z.size());
      const Scalar rho = cfg.cross_modal_signal;
      const Scalar resid = std::sqrt(std::max(0.0, 1.0 - rho * rho));
      for (std::size_t i = 0; i < z.size(); ++i) z_img[i] = rho * z[i] + resid * rng.normal();

      inst.y_task = Tensor(Shape{n_labels});
      for (Index l = 0; l < n_labels; ++l) {
        const Scalar liability = dot(weights.task_weights[static_cast<std::size_t>(l)], z) +
                                 cfg.label_noise * rng.normal();
        inst.y_task.data()[l] =
            liability > weights.task_thresholds[static_cast<std::size_t>(l)] ? 1.0 : 0.0;
      }

      RawTimeSeries raw;
      std::vector<Scalar> z_vis(z.begin(), z.begin() + weights.visible_dims);
      for (std::size_t v = 0; v < registry.variables.size(); ++v) {
        const RegistryVariable& var = registry.variables[v];
        const Index span = cfg.max_events_per_variable - cfg.min_events_per_variable + 1;
        const Index count = cfg.min_events_per_variable + rng.uniform_index(span);
        const Scalar signal = dot(weights.ehr_loadings[v], z_vis);
        for (Index e = 0; e < count; ++e) {
          TimedEvent ev;
          ev.hours = rng.uniform(0.0, cfg.horizon_hours);
          ev.variable = static_cast<Index>(v);
          const Scalar u = signal + cfg.observation_noise * rng.normal();
          if (var.kind == VariableKind::continuous) {
            ev.value = var.mean + var.stddev * u;
          } else {
            const Scalar sd = std::sqrt(1.0 + cfg.observation_noise * cfg.observation_noise);
            const Scalar q = normal_cdf(u / sd);
            const Index n_cat = static_cast<Index>(var.categories.size());
            ev.value = static_cast<Scalar>(
                std::min<Index>(n_cat - 1, static_cast<Index>(q * static_cast<Scalar>(n_cat))));
          }
          raw.events.push_back(ev);
        }
      }
      inst.x_ehr = discretize(raw, registry, cfg.horizon_hours);

      inst.is_paired = !rng.bernoulli(cfg.missing_image_rate);
      if (inst.is_paired) {
        inst.x_cxr = render_image(z_img, side, rng);
        inst.y_cxr = Tensor(Shape{kCxrLabelCount});
        for (Index l = 0; l < kCxrLabelCount; ++l) {
          const Scalar liability = dot(weights.cxr_weights[static_cast<std::size_t>(l)], z_img) +
                                   cfg.label_noise * rng.normal();
          inst.y_cxr.data()[l] =
              liability > weights.cxr_thresholds[static_cast<std::size_t>(l)] ? 1.0 : 0.0;
        }
      }
      validate_instance(inst, cfg.task);
      instances.push_back(std::move(inst));
    }

    DatasetSplit split =
        split_by_subject(instances, cfg.fractions, base.derive(0x5EED5ULL).seed());
    if (split_labels_usable(split.train, cfg.task) && split_labels_usable(split.val, cfg.task) &&
        split_labels_usable(split.test, cfg.task)) {
      return split;
    }
    std::fprintf(stderr,
                 "generate_synthetic: degenerate labels in a split (attempt %d/%d), regenerating\n",
                 attempt + 1, kMaxAttempts);
  }
  throw ValidationError("generate_synthetic: labels degenerate in every attempt; adjust config");
}

// ---------------------------------------------------------------------------
// Image augmentation

namespace {

// Bilinear sample with zero outside the image.
Scalar sample_bilinear(const Scalar* plane, Index h, Index w, Scalar y, Scalar x) {
  const Index x0 = static_cast<Index>(std::floor(x));
  const Index y0 = static_cast<Index>(std::floor(y));
  const Scalar fx = x - static_cast<Scalar>(x0);
  const Scalar fy = y - static_cast<Scalar>(y0);
  auto pixel = [&](Index yy, Index xx) -> Scalar {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
    return plane[yy * w + xx];
  };
  const Scalar top = pixel(y0, x0) * (1.0 - fx) + pixel(y0, x0 + 1) * fx;
  const Scalar bottom = pixel(y0 + 1, x0) * (1.0 - fx) + pixel(y0 + 1, x0 + 1) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

Tensor resize_bilinear(const Tensor& image, Index out_h, Index out_w) {
  const Index ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == out_h && w == out_w) return image.clone();
  Tensor out(Shape{ch, out_h, out_w});
  const Scalar sy = static_cast<Scalar>(h) / static_cast<Scalar>(out_h);
  const Scalar sx = static_cast<Scalar>(w) / static_cast<Scalar>(out_w);
  for (Index c = 0; c < ch; ++c) {
    const Scalar* src = image.data() + c * h * w;
    Scalar* dst = out.data() + c * out_h * out_w;
    for (Index y = 0; y < out_h; ++y) {
      const Scalar src_y = (static_cast<Scalar>(y) + 0.5) * sy - 0.5;
      for (Index x = 0; x < out_w; ++x) {
        const Scalar src_x = (static_cast<Scalar>(x) + 0.5) * sx - 0.5;
        dst[y * out_w + x] = sample_bilinear(src, h, w, src_y, src_x);
      }
    }
  }
  return out;
}

Tensor flip_horizontal(const Tensor& image) {
  const Index ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (Index c = 0; c < ch; ++c) {
    for (Index y = 0; y < h; ++y) {
      const Scalar* src = image.data() + (c * h + y) * w;
      Scalar* dst = out.data() + (c * h + y) * w;
      for (Index x = 0; x < w; ++x) dst[x] = src[w - 1 - x];
    }
  }
  return out;
}

Tensor affine_transform(const Tensor& image, Scalar rot_deg, Scalar scale, Scalar shear_deg,
                        Scalar tx, Scalar ty) {
  if (rot_deg == 0.0 && scale == 1.0 && shear_deg == 0.0 && tx == 0.0 && ty == 0.0) {
    return image;
  }
  const Index ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  const Scalar theta = rot_deg * M_PI / 180.0;
  const Scalar phi = shear_deg * M_PI / 180.0;
  // Forward map dest = R * Shear * diag(scale) * src + t; sampling uses the
  // inverse.
  const Scalar a = scale * (std::cos(theta) - std::sin(theta) * std::tan(phi));
  const Scalar b = scale * std::sin(theta);
  const Scalar c = scale * (-std::sin(theta) - std::cos(theta) * std::tan(phi));
  const Scalar d = scale * std::cos(theta);
  // Matrix [[a, c], [b, d]] maps (x, y); invert it.
  const Scalar det = a * d - b * c;
  const Scalar ia = d / det, ic = -c / det, ib = -b / det, id = a / det;
  const Scalar cx = static_cast<Scalar>(w - 1) / 2.0;
  const Scalar cy = static_cast<Scalar>(h - 1) / 2.0;
  Tensor out(image.shape());
  for (Index k = 0; k < ch; ++k) {
    const Scalar* src = image.data() + k * h * w;
    Scalar* dst = out.data() + k * h * w;
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const Scalar xd = static_cast<Scalar>(x) - cx - tx;
        const Scalar yd = static_cast<Scalar>(y) - cy - ty;
        const Scalar xs = ia * xd + ic * yd + cx;
        const Scalar ys = ib * xd + id * yd + cy;
        dst[y * w + x] = sample_bilinear(src, h, w, ys, xs);
      }
    }
  }
  return out;
}

Tensor crop(const Tensor& image, Index top, Index left, Index size) {
  const Index ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (top < 0 || left < 0 || top + size > h || left + size > w) {
    throw ContractError("crop window out of bounds");
  }
  Tensor out(Shape{ch, size, size});
  for (Index c = 0; c < ch; ++c) {
    for (Index y = 0; y < size; ++y) {
      std::memcpy(out.data() + (c * size + y) * size,
                  image.data() + (c * h + top + y) * w + left, sizeof(Scalar) * size);
    }
  }
  return out;
}

}  // namespace

AugmentConfig scaled_augment_config(Index crop_resolution) {
  AugmentConfig cfg;
  cfg.crop = crop_resolution;
  cfg.resize = std::max(crop_resolution,
                        static_cast<Index>(std::lround(static_cast<Scalar>(crop_resolution) *
                                                       256.0 / 224.0)));
  return cfg;
}

Tensor augment_image(const Tensor& image, AugmentMode mode, const AugmentConfig& config,
                     Rng& rng) {
  if (image.rank() != 3) {
    throw DimensionError("augment_image expects C x H x W, got " + shape_string(image.shape()));
  }
  if (image.dim(1) < 8 || image.dim(2) < 8) {
    throw ValidationError("augment_image needs at least 8x8 input, got " +
                          shape_string(image.shape()));
  }
  if (config.crop > config.resize) {
    throw ValidationError("augment crop " + std::to_string(config.crop) +
                          " exceeds resize " + std::to_string(config.resize));
  }
  Tensor out = resize_bilinear(image, config.resize, config.resize);
  const Index slack = config.resize - config.crop;
  if (mode == AugmentMode::eval) {
    return crop(out, slack / 2, slack / 2, config.crop);
  }
  if (rng.uniform() < config.flip_prob) out = flip_horizontal(out);
  const Scalar rot = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg);
  const Scalar sc = rng.uniform(config.min_scale, config.max_scale);
  const Scalar shear = rng.uniform(-config.max_shear_deg, config.max_shear_deg);
  const Scalar max_shift = config.max_translate_frac * static_cast<Scalar>(config.resize);
  const Scalar tx = rng.uniform(-max_shift, max_shift);
  const Scalar ty = rng.uniform(-max_shift, max_shift);
  out = affine_transform(out, rot, sc, shear, tx, ty);
  const Index top = slack > 0 ? rng.uniform_index(slack + 1) : 0;
  const Index left = slack > 0 ? rng.uniform_index(slack + 1) : 0;
  return crop(out, top, left, config.crop);
}

// ---------------------------------------------------------------------------
// On-disk dataset

namespace {

constexpr std::uint32_t kRecordMagic = 0x3152464DU;  // "MFR1"
constexpr std::uint32_t kFileMagic = 0x5344464DU;    // "MFDS"

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

void put_f64(std::string& out, Scalar v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw IoError("truncated dataset record");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  Scalar f64() {
    const std::uint64_t bits = u64();
    Scalar v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
};

void append_tensor_payload(std::string& out, const Tensor& t) {
  for (Index i = 0; i < t.numel(); ++i) put_f64(out, t.data()[i]);
}

std::string encode_record(const MultimodalInstance& inst) {
  std::string body;
  put_u32(body, kRecordMagic);
  std::uint32_t flags = 0;
  if (inst.is_paired) flags |= 1U;
  if (inst.age) flags |= 2U;
  put_u32(body, flags);
  put_u64(body, inst.instance_id);
  put_u64(body, inst.subject_id);
  put_f64(body, inst.age.value_or(0.0));
  put_u32(body, static_cast<std::uint32_t>(inst.x_ehr.dim(0)));
  put_u32(body, static_cast<std::uint32_t>(inst.x_ehr.dim(1)));
  put_u32(body, static_cast<std::uint32_t>(inst.y_task.numel()));
  if (inst.is_paired) {
    put_u32(body, static_cast<std::uint32_t>(inst.x_cxr.dim(0)));
    put_u32(body, static_cast<std::uint32_t>(inst.x_cxr.dim(1)));
    put_u32(body, static_cast<std::uint32_t>(inst.x_cxr.dim(2)));
    put_u32(body, static_cast<std::uint32_t>(inst.y_cxr.numel()));
  } else {
    for (int i = 0; i < 4; ++i) put_u32(body, 0);
  }
  append_tensor_payload(body, inst.x_ehr);
  append_tensor_payload(body, inst.y_task);
  if (inst.is_paired) {
    append_tensor_payload(body, inst.x_cxr);
    append_tensor_payload(body, inst.y_cxr);
  }
  std::string record;
  put_u64(record, body.size());
  record += body;
  return record;
}

MultimodalInstance decode_record(Reader& reader) {
  if (reader.u32() != kRecordMagic) throw IoError("bad record magic in dataset file");
  MultimodalInstance inst;
  const std::uint32_t flags = reader.u32();
  inst.is_paired = (flags & 1U) != 0;
  inst.instance_id = reader.u64();
  inst.subject_id = reader.u64();
  const Scalar age = reader.f64();
  if (flags & 2U) inst.age = age;
  const Index steps = static_cast<Index>(reader.u32());
  const Index width = static_cast<Index>(reader.u32());
  const Index n_labels = static_cast<Index>(reader.u32());
  const Index img_c = static_cast<Index>(reader.u32());
  const Index img_h = static_cast<Index>(reader.u32());
  const Index img_w = static_cast<Index>(reader.u32());
  const Index n_cxr = static_cast<Index>(reader.u32());
  inst.x_ehr = Tensor(Shape{steps, width});
  for (Index i = 0; i < inst.x_ehr.numel(); ++i) inst.x_ehr.data()[i] = reader.f64();
  inst.y_task = Tensor(Shape{n_labels});
  for (Index i = 0; i < n_labels; ++i) inst.y_task.data()[i] = reader.f64();
  if (inst.is_paired) {
    inst.x_cxr = Tensor(Shape{img_c, img_h, img_w});
    for (Index i = 0; i < inst.x_cxr.numel(); ++i) inst.x_cxr.data()[i] = reader.f64();
    inst.y_cxr = Tensor(Shape{n_cxr});
    for (Index i = 0; i < n_cxr; ++i) inst.y_cxr.data()[i] = reader.f64();
  }
  return inst;
}

std::string label_summary(const MultimodalInstance& inst) {
  const Index n = inst.y_task.numel();
  if (n == 1) return inst.y_task.data()[0] > 0.5 ? "1" : "0";
  Index pos = 0;
  for (Index i = 0; i < n; ++i) pos += inst.y_task.data()[i] > 0.5 ? 1 : 0;
  return "pos=" + std::to_string(pos) + "/" + std::to_string(n);
}

void write_split(const fs::path& dir, const std::vector<MultimodalInstance>& instances) {
  fs::create_directories(dir);
  std::ofstream records(dir / "records.bin", std::ios::binary);
  if (!records) throw IoError("cannot write " + (dir / "records.bin").string());
  std::string header;
  put_u32(header, kFileMagic);
  put_u32(header, 1);  // format version
  put_u64(header, instances.size());
  records << header;
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.csv").string());
  manifest << "instance_id,subject_id,is_paired,label_summary\n";
  for (const MultimodalInstance& inst : instances) {
    records << encode_record(inst);
    manifest << inst.instance_id << "," << inst.subject_id << ","
             << (inst.is_paired ? 1 : 0) << "," << label_summary(inst) << "\n";
  }
  if (!records || !manifest) throw IoError("failed writing split " + dir.string());
}

}  // namespace

void save_dataset(const DatasetSplit& split, const std::string& root, const DatasetMeta& meta,
                  const std::string& registry_text) {
  const fs::path base(root);
  fs::create_directories(base);
  write_split(base / "train", split.train);
  write_split(base / "val", split.val);
  write_split(base / "test", split.test);
  write_registry_file((base / "registry.txt").string(), registry_text);

  ordered_json j;
  j["format_version"] = 1;
  j["task"] = task_name(meta.task);
  j["seed"] = meta.seed;
  j["registry_hash"] = meta.registry_hash;
  j["image_resolution"] = meta.image_resolution;
  j["source_resolution"] = meta.source_resolution;
  j["horizon_hours"] = meta.horizon_hours;
  j["missing_image_rate"] = meta.missing_image_rate;
  j["cross_modal_signal"] = meta.cross_modal_signal;
  j["n_subjects"] = meta.n_subjects;
  if (meta.task == Task::phenotyping) {
    ordered_json names = ordered_json::array();
    ordered_json types = ordered_json::array();
    for (const PhenotypeLabel& l : phenotype_labels()) {
      names.push_back(l.name);
      types.push_back(l.type);
    }
    j["label_names"] = names;
    j["label_types"] = types;
  }
  std::ofstream out(base / "dataset.json");
  if (!out) throw IoError("cannot write " + (base / "dataset.json").string());
  out << j.dump(2) << "\n";
}

DatasetMeta load_dataset_meta(const std::string& root) {
  const fs::path path = fs::path(root) / "dataset.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset metadata: " + path.string());
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw IoError("cannot parse " + path.string() + ": " + e.what());
  }
  DatasetMeta meta;
  meta.task = task_from_name(j.at("task").get<std::string>());
  meta.seed = j.at("seed").get<std::uint64_t>();
  meta.registry_hash = j.at("registry_hash").get<std::string>();
  meta.image_resolution = j.at("image_resolution").get<Index>();
  meta.source_resolution = j.at("source_resolution").get<Index>();
  meta.horizon_hours = j.at("horizon_hours").get<Scalar>();
  meta.missing_image_rate = j.at("missing_image_rate").get<Scalar>();
  meta.cross_modal_signal = j.at("cross_modal_signal").get<Scalar>();
  meta.n_subjects = j.at("n_subjects").get<Index>();
  return meta;
}

std::vector<MultimodalInstance> load_split_records(const std::string& root,
                                                   const std::string& split_name) {
  const fs::path path = fs::path(root) / split_name / "records.bin";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open split records: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string bytes = buffer.str();
  Reader reader(bytes);
  if (reader.u32() != kFileMagic) throw IoError("bad dataset file magic: " + path.string());
  const std::uint32_t version = reader.u32();
  if (version != 1) throw IoError("unsupported dataset format version " + std::to_string(version));
  const std::uint64_t count = reader.u64();
  std::vector<MultimodalInstance> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t length = reader.u64();
    const std::size_t start = reader.pos;
    out.push_back(decode_record(reader));
    if (reader.pos - start != length) throw IoError("record length mismatch in " + path.string());
  }
  return out;
}

DatasetSplit load_dataset(const std::string& root) {
  DatasetSplit split;
  split.train = load_split_records(root, "train");
  split.val = load_split_records(root, "val");
  split.test = load_split_records(root, "test");
  return split;
}

// ---------------------------------------------------------------------------
// Batches

Batch make_batch(const std::vector<MultimodalInstance>& instances,
                 const std::vector<Index>& indices, Task task, const AugmentConfig& augment,
                 AugmentMode mode, Rng& rng) {
  if (indices.empty()) throw ValidationError("make_batch: empty index list");
  Batch batch;
  batch.size = static_cast<Index>(indices.size());
  const MultimodalInstance& first = instances.at(static_cast<std::size_t>(indices[0]));
  const Index steps = first.x_ehr.dim(0);
  const Index width = first.x_ehr.dim(1);
  const Index n_labels = label_count(task);
  batch.x_ehr = Tensor(Shape{batch.size, steps, width});
  batch.y = Tensor(Shape{batch.size, n_labels});

  std::vector<Tensor> images;
  for (Index row = 0; row < batch.size; ++row) {
    const MultimodalInstance& inst = instances.at(static_cast<std::size_t>(indices[row]));
    validate_instance(inst, task);
    if (inst.x_ehr.dim(0) != steps || inst.x_ehr.dim(1) != width) {
      throw ValidationError("make_batch: mixed sequence shapes " +
                            shape_string(inst.x_ehr.shape()) + " vs " +
                            shape_string(first.x_ehr.shape()));
    }
    std::memcpy(batch.x_ehr.data() + row * steps * width, inst.x_ehr.data(),
                sizeof(Scalar) * steps * width);
    std::memcpy(batch.y.data() + row * n_labels, inst.y_task.data(), sizeof(Scalar) * n_labels);
    if (inst.is_paired) {
      batch.paired_rows.push_back(row);
      images.push_back(augment_image(inst.x_cxr, mode, augment, rng));
    }
  }
  if (!images.empty()) {
    const Index p = static_cast<Index>(images.size());
    const Index ch = images[0].dim(0), h = images[0].dim(1), w = images[0].dim(2);
    batch.x_cxr = Tensor(Shape{p, ch, h, w});
    batch.y_cxr = Tensor(Shape{p, kCxrLabelCount});
    for (Index i = 0; i < p; ++i) {
      std::memcpy(batch.x_cxr.data() + i * ch * h * w, images[static_cast<std::size_t>(i)].data(),
                  sizeof(Scalar) * ch * h * w);
      const MultimodalInstance& inst =
          instances.at(static_cast<std::size_t>(indices[batch.paired_rows[static_cast<std::size_t>(i)]]));
      std::memcpy(batch.y_cxr.data() + i * kCxrLabelCount, inst.y_cxr.data(),
                  sizeof(Scalar) * kCxrLabelCount);
    }
  }
  return batch;
}

}  // namespace medfuse

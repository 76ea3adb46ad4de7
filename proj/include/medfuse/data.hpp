#pragma once

#include <optional>

#include "medfuse/registry.hpp"
#include "medfuse/tensor.hpp"

namespace medfuse {

enum class Task { mortality, phenotyping };

inline constexpr Index kCxrLabelCount = 14;
inline constexpr Index kPhenotypeLabelCount = 25;

Index label_count(Task task);  // 1 for mortality, 25 for phenotyping
std::string task_name(Task task);
Task task_from_name(const std::string& name);

struct PhenotypeLabel {
  const char* name;
  const char* type;  // acute | mixed | chronic
};
/// The 25-phenotype label set with its acute/mixed/chronic grouping.
const std::vector<PhenotypeLabel>& phenotype_labels();

// ---------------------------------------------------------------------------
// Raw time series and discretization

struct TimedEvent {
  Scalar hours = 0.0;   // since ICU admission
  Index variable = 0;   // registry index
  Scalar value = 0.0;   // measurement, or category index for categoricals
};

struct RawTimeSeries {
  std::vector<TimedEvent> events;
};

/// Bins events every `bin_hours` (default two) into a T x 76 tensor:
/// last-observation-carried-forward values, registry normal values before the
/// first observation, continuous columns standardized, categoricals one-hot,
/// and a per-variable mask column that is 1 from the first observed bin on.
/// With a horizon, T = ceil(horizon / bin_hours) and later events are
/// ignored; without one, T covers the last event.
Tensor discretize(const RawTimeSeries& raw, const VariableRegistry& registry,
                  std::optional<Scalar> horizon_hours, Scalar bin_hours = 2.0);

// ---------------------------------------------------------------------------
// Instances and splits

struct MultimodalInstance {
  std::uint64_t instance_id = 0;
  std::uint64_t subject_id = 0;
  Tensor x_ehr;   // T x 76
  Tensor x_cxr;   // 3 x H x W; undefined when the image is missing
  Tensor y_task;  // task label vector
  Tensor y_cxr;   // 14 radiology labels; undefined when the image is missing
  std::optional<Scalar> age;
  bool is_paired = false;
  // Generator ground truth, kept in memory for diagnostics; not serialized.
  std::vector<Scalar> latent;
};

/// Checks the is_paired <-> image-present invariant and label shape.
void validate_instance(const MultimodalInstance& instance, Task task);

struct SplitFractions {
  Scalar train = 0.70;
  Scalar val = 0.10;
  Scalar test = 0.20;
};

struct DatasetSplit {
  std::vector<MultimodalInstance> train;
  std::vector<MultimodalInstance> val;
  std::vector<MultimodalInstance> test;
  SplitFractions fractions;
};

/// Patient-level split: instances of one subject land in one split; subject
/// counts per split are within one of the exact fractional targets.
DatasetSplit split_by_subject(const std::vector<MultimodalInstance>& instances,
                              const SplitFractions& fractions, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic data

/// Per subject, a latent factor drives the event stream, the image, and the
/// labels. The first half of the latent components is visible in the clinical
/// stream; the image renders a view of all components correlated
/// `cross_modal_signal` with the label-relevant latent, so images carry
/// complementary signal when the weight is high and none when it is zero.
struct SyntheticConfig {
  Task task = Task::mortality;
  Index n_subjects = 200;
  Scalar missing_image_rate = 0.3;  // p
  Scalar cross_modal_signal = 0.8;  // rho
  std::uint64_t seed = 0;
  Index latent_dim = 6;
  /// Encoder-side crop resolution; stored images are generated slightly
  /// larger so the augmentation crop has room.
  Index image_resolution = 32;
  Scalar horizon_hours = 48.0;
  Scalar prevalence = 0.35;    // mortality positive rate
  Scalar label_noise = 0.25;   // liability noise relative to unit signal
  Scalar observation_noise = 0.3;
  Index min_events_per_variable = 3;
  Index max_events_per_variable = 8;
  SplitFractions fractions;
};

/// Source image side length stored on disk for a given crop resolution
/// (scaled 256:224).
Index synthetic_source_resolution(Index crop_resolution);

DatasetSplit generate_synthetic(const SyntheticConfig& config, const VariableRegistry& registry);

/// Replicates a single-channel image across three channels.
Tensor replicate_channels(const Tensor& image);

// ---------------------------------------------------------------------------
// Image augmentation

enum class AugmentMode { train, eval };

struct AugmentConfig {
  Index resize = 256;
  Index crop = 224;
  Scalar flip_prob = 0.5;
  Scalar max_rotation_deg = 15.0;
  Scalar min_scale = 0.9;
  Scalar max_scale = 1.1;
  Scalar max_shear_deg = 10.0;
  Scalar max_translate_frac = 0.05;
};

/// Augmentation sizes scaled proportionally for a non-default crop resolution.
AugmentConfig scaled_augment_config(Index crop_resolution);

/// train: resize -> random horizontal flip -> random affine -> random crop;
/// eval: resize -> center crop.
Tensor augment_image(const Tensor& image, AugmentMode mode, const AugmentConfig& config, Rng& rng);

// ---------------------------------------------------------------------------
// On-disk dataset

struct DatasetMeta {
  Task task = Task::mortality;
  std::uint64_t seed = 0;
  std::string registry_hash;
  Index image_resolution = 32;   // crop resolution the dataset was built for
  Index source_resolution = 37;  // stored image side length
  Scalar horizon_hours = 48.0;
  Scalar missing_image_rate = 0.0;
  Scalar cross_modal_signal = 0.0;
  Index n_subjects = 0;
};

void save_dataset(const DatasetSplit& split, const std::string& root, const DatasetMeta& meta,
                  const std::string& registry_text);
DatasetMeta load_dataset_meta(const std::string& root);
DatasetSplit load_dataset(const std::string& root);
std::vector<MultimodalInstance> load_split_records(const std::string& root,
                                                   const std::string& split_name);

// ---------------------------------------------------------------------------
// Batches

/// Tensorized view of a span of instances. EHR rows cover every instance;
/// image rows exist for the paired subset, indexed through `paired_rows`.
struct Batch {
  Index size = 0;
  Tensor x_ehr;                    // B x T x 76
  Tensor y;                        // B x L
  std::vector<Index> paired_rows;  // rows of instances with images
  Tensor x_cxr;                    // P x 3 x R x R (undefined when P == 0)
  Tensor y_cxr;                    // P x 14 (undefined when P == 0)
};

/// Assembles a batch; images are run through `augment_image` with the given
/// mode. All instances in a batch must share the EHR sequence length.
Batch make_batch(const std::vector<MultimodalInstance>& instances,
                 const std::vector<Index>& indices, Task task, const AugmentConfig& augment,
                 AugmentMode mode, Rng& rng);

}  // namespace medfuse

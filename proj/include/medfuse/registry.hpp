#pragma once

#include "medfuse/common.hpp"

namespace medfuse {

// Width of one discretized time-step row: 59 value columns (12 continuous +
// 47 categorical one-hot) followed by 17 observed-mask columns.
inline constexpr Index kFeatureWidth = 76;
inline constexpr Index kVariableCount = 17;
inline constexpr Index kCategoricalCount = 5;
inline constexpr Index kContinuousCount = 12;

enum class VariableKind { continuous, categorical };

struct RegistryVariable {
  std::string name;
  VariableKind kind = VariableKind::continuous;
  // Continuous: imputation value plus standardization stats.
  Scalar normal_value = 0.0;
  Scalar mean = 0.0;
  Scalar stddev = 1.0;
  // Categorical: category vocabulary and the index imputed when unobserved.
  std::vector<std::string> categories;
  std::string normal_token;
  Index normal_category = 0;
  // Layout: value columns [column_start, column_start+column_count) and the
  // observed-mask column.
  Index column_start = 0;
  Index column_count = 1;
  Index mask_column = 0;
};

struct VariableRegistry {
  int version = 0;
  std::vector<RegistryVariable> variables;
  Index total_width = 0;
  /// FNV-1a fingerprint of the source text, recorded in dataset manifests and
  /// checkpoints so layouts are never mixed silently.
  std::string hash;

  const RegistryVariable& variable(Index index) const;
  Index find(const std::string& name) const;  // -1 when absent
};

/// Parses and validates registry text; throws ValidationError listing every
/// violation found.
VariableRegistry parse_registry_text(const std::string& text);

/// Loads, parses and validates a registry file.
VariableRegistry validate_registry(const std::string& path);

/// The registry shipped with the project (17 variables, width 76).
const std::string& default_registry_text();
const VariableRegistry& default_registry();

void write_registry_file(const std::string& path, const std::string& text);

}  // namespace medfuse

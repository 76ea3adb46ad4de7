#include "medfuse/registry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

namespace medfuse {

const RegistryVariable& VariableRegistry::variable(Index index) const {
  if (index < 0 || index >= static_cast<Index>(variables.size())) {
    throw ContractError("registry variable index " + std::to_string(index) + " out of range");
  }
  return variables[static_cast<std::size_t>(index)];
}

Index VariableRegistry::find(const std::string& name) const {
  for (std::size_t i = 0; i < variables.size(); ++i) {
    if (variables[i].name == name) return static_cast<Index>(i);
  }
  return -1;
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> parts;
  std::istringstream in(line);
  std::string token;
  while (in >> token) parts.push_back(token);
  return parts;
}

bool parse_scalar(const std::string& token, Scalar& out) {
  try {
    std::size_t used = 0;
    out = std::stod(token, &used);
    return used == token.size();
  } catch (const std::exception&) {
    return false;
  }
}

std::string range_string(Index start, Index count) {
  return "[" + std::to_string(start) + ", " + std::to_string(start + count) + ")";
}

}  // namespace

VariableRegistry parse_registry_text(const std::string& text) {
  VariableRegistry reg;
  std::vector<std::string> violations;
  std::istringstream in(text);
  std::string line;
  RegistryVariable* current = nullptr;
  bool version_seen = false;
  int line_no = 0;

  auto complain = [&](const std::string& message) { violations.push_back(message); };

  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    const std::vector<std::string> parts = split_ws(line);
    if (parts.empty()) continue;
    const std::string& key = parts[0];
    if (key == "registry_version") {
      if (parts.size() != 2) complain("line " + std::to_string(line_no) + ": registry_version needs one value");
      else {
        reg.version = std::atoi(parts[1].c_str());
        version_seen = true;
      }
    } else if (key == "variable") {
      if (parts.size() != 2) {
        complain("line " + std::to_string(line_no) + ": variable needs a name");
        current = nullptr;
        continue;
      }
      reg.variables.emplace_back();
      current = &reg.variables.back();
      current->name = parts[1];
      current->mask_column = -1;
      current->column_start = -1;
      current->column_count = -1;
      current->stddev = 0.0;
      current->normal_value = std::numeric_limits<Scalar>::quiet_NaN();
      current->normal_category = -1;
    } else if (current == nullptr) {
      complain("line " + std::to_string(line_no) + ": '" + key + "' outside a variable block");
    } else if (key == "kind") {
      if (parts.size() == 2 && parts[1] == "continuous") current->kind = VariableKind::continuous;
      else if (parts.size() == 2 && parts[1] == "categorical") current->kind = VariableKind::categorical;
      else complain(current->name + ": kind must be continuous or categorical");
    } else if (key == "normal") {
      // Resolved after the block is complete so key order does not matter.
      if (parts.size() != 2) complain(current->name + ": normal needs one value");
      else current->normal_token = parts[1];
    } else if (key == "mean") {
      Scalar v;
      if (parts.size() == 2 && parse_scalar(parts[1], v)) current->mean = v;
      else complain(current->name + ": mean needs a numeric value");
    } else if (key == "std") {
      Scalar v;
      if (parts.size() == 2 && parse_scalar(parts[1], v)) current->stddev = v;
      else complain(current->name + ": std needs a numeric value");
    } else if (key == "categories") {
      current->categories.assign(parts.begin() + 1, parts.end());
    } else if (key == "columns") {
      if (parts.size() != 3) complain(current->name + ": columns needs start and count");
      else {
        current->column_start = std::atol(parts[1].c_str());
        current->column_count = std::atol(parts[2].c_str());
      }
    } else if (key == "mask_column") {
      if (parts.size() != 2) complain(current->name + ": mask_column needs one value");
      else current->mask_column = std::atol(parts[1].c_str());
    } else {
      complain("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }

  if (!version_seen) complain("registry_version missing");

  // Per-variable checks.
  for (RegistryVariable& v : reg.variables) {
    if (v.kind == VariableKind::continuous) {
      if (v.normal_token.empty()) complain(v.name + ": normal value missing");
      else if (!parse_scalar(v.normal_token, v.normal_value)) {
        complain(v.name + ": normal value '" + v.normal_token + "' is not numeric");
      }
      if (v.stddev <= 0.0) complain(v.name + ": std must be positive");
      if (v.column_count != 1 && v.column_count >= 0) {
        complain(v.name + ": continuous variable must occupy one column, has " +
                 std::to_string(v.column_count));
      }
      if (!v.categories.empty()) complain(v.name + ": continuous variable lists categories");
    } else {
      if (v.categories.size() < 2) complain(v.name + ": categorical variable needs >= 2 categories");
      if (v.normal_token.empty()) complain(v.name + ": normal value missing");
      else {
        const auto it = std::find(v.categories.begin(), v.categories.end(), v.normal_token);
        if (it == v.categories.end()) {
          complain(v.name + ": normal value '" + v.normal_token + "' is not a listed category");
        } else {
          v.normal_category = static_cast<Index>(it - v.categories.begin());
        }
      }
      if (v.column_count >= 0 && v.column_count != static_cast<Index>(v.categories.size())) {
        complain(v.name + ": columns count " + std::to_string(v.column_count) +
                 " does not match " + std::to_string(v.categories.size()) + " categories");
      }
    }
    if (v.column_start < 0 || v.column_count < 0) complain(v.name + ": columns missing");
    if (v.mask_column < 0) complain(v.name + ": mask_column missing");
  }

  // Duplicate names.
  for (std::size_t i = 0; i < reg.variables.size(); ++i) {
    for (std::size_t j = i + 1; j < reg.variables.size(); ++j) {
      if (reg.variables[i].name == reg.variables[j].name) {
        complain("duplicate variable name '" + reg.variables[i].name + "'");
      }
    }
  }

  if (static_cast<Index>(reg.variables.size()) != kVariableCount) {
    complain("registry must define " + std::to_string(kVariableCount) + " variables, found " +
             std::to_string(reg.variables.size()));
  }
  Index n_cat = 0, n_cont = 0;
  for (const RegistryVariable& v : reg.variables) {
    (v.kind == VariableKind::categorical ? n_cat : n_cont) += 1;
  }
  if (!reg.variables.empty() && static_cast<Index>(reg.variables.size()) == kVariableCount &&
      (n_cat != kCategoricalCount || n_cont != kContinuousCount)) {
    complain("registry must have " + std::to_string(kCategoricalCount) + " categorical and " +
             std::to_string(kContinuousCount) + " continuous variables, found " +
             std::to_string(n_cat) + "/" + std::to_string(n_cont));
  }

  // Layout: ranges disjoint, contiguous, total width 76.
  struct Range {
    Index start, count;
    std::string owner;
  };
  std::vector<Range> ranges;
  for (const RegistryVariable& v : reg.variables) {
    if (v.column_start >= 0 && v.column_count > 0) {
      ranges.push_back({v.column_start, v.column_count, v.name + " values"});
    }
    if (v.mask_column >= 0) ranges.push_back({v.mask_column, 1, v.name + " mask"});
  }
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    for (std::size_t j = i + 1; j < ranges.size(); ++j) {
      const Range& a = ranges[i];
      const Range& b = ranges[j];
      if (a.start < b.start + b.count && b.start < a.start + a.count) {
        complain("overlapping column ranges: " + range_string(a.start, a.count) + " (" + a.owner +
                 ") vs " + range_string(b.start, b.count) + " (" + b.owner + ")");
      }
    }
  }
  Index width = 0;
  for (const Range& r : ranges) width = std::max(width, r.start + r.count);
  Index covered = 0;
  for (const Range& r : ranges) covered += r.count;
  if (width != kFeatureWidth || covered != kFeatureWidth) {
    complain("layout must cover exactly " + std::to_string(kFeatureWidth) + " columns, spans " +
             std::to_string(width) + " with " + std::to_string(covered) + " covered");
  }
  reg.total_width = width;

  if (!violations.empty()) {
    std::string message = "registry validation failed:";
    for (const std::string& v : violations) message += "\n  - " + v;
    throw ValidationError(message);
  }
  reg.hash = hex64(fnv1a64(text));
  return reg;
}

VariableRegistry validate_registry(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open registry file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_registry_text(buffer.str());
}

void write_registry_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write registry file: " + path);
  out << text;
  if (!out) throw IoError("failed writing registry file: " + path);
}

const std::string& default_registry_text() {
  static const std::string text = R"(# Clinical variable registry: 17 variables, row width 76
# (12 continuous columns + 47 categorical one-hot columns + 17 mask columns).
registry_version 1

variable capillary_refill_rate
kind categorical
categories normal abnormal
normal normal
columns 0 2
mask_column 59

variable diastolic_blood_pressure
kind continuous
normal 59.0
mean 63.4
std 13.9
columns 2 1
mask_column 60

variable fraction_inspired_oxygen
kind continuous
normal 0.21
mean 0.52
std 0.19
columns 3 1
mask_column 61

variable gcs_eye_opening
kind categorical
categories none to_pain to_speech spontaneously 1_no_response 2_to_pain 3_to_speech 4_spontaneously
normal spontaneously
columns 4 8
mask_column 62

variable gcs_motor_response
kind categorical
categories no_response abnormal_extension abnormal_flexion flex_withdraws localizes_pain obeys_commands 1_no_response 2_abnormal_extension 3_abnormal_flexion 4_flex_withdraws 5_localizes_pain 6_obeys_commands
normal obeys_commands
columns 12 12
mask_column 63

variable gcs_total
kind categorical
categories 3 4 5 6 7 8 9 10 11 12 13 14 15
normal 15
columns 24 13
mask_column 64

variable gcs_verbal_response
kind categorical
categories no_response incomprehensible_sounds inappropriate_words confused oriented 1_no_response 2_incomprehensible 3_inappropriate_words 4_confused 5_oriented no_response_ett 1_no_response_ett
normal oriented
columns 37 12
mask_column 65

variable glucose
kind continuous
normal 128.0
mean 136.0
std 58.0
columns 49 1
mask_column 66

variable heart_rate
kind continuous
normal 86.0
mean 86.0
std 18.0
columns 50 1
mask_column 67

variable height
kind continuous
normal 170.0
mean 170.0
std 11.0
columns 51 1
mask_column 68

variable mean_blood_pressure
kind continuous
normal 77.0
mean 78.6
std 14.2
columns 52 1
mask_column 69

variable oxygen_saturation
kind continuous
normal 98.0
mean 96.9
std 3.3
columns 53 1
mask_column 70

variable ph
kind continuous
normal 7.4
mean 7.38
std 0.08
columns 54 1
mask_column 71

variable respiratory_rate
kind continuous
normal 19.0
mean 19.2
std 5.7
columns 55 1
mask_column 72

variable systolic_blood_pressure
kind continuous
normal 118.0
mean 120.5
std 22.8
columns 56 1
mask_column 73

variable temperature
kind continuous
normal 36.6
mean 36.9
std 0.7
columns 57 1
mask_column 74

variable weight
kind continuous
normal 81.0
mean 82.1
std 23.4
columns 58 1
mask_column 75
)";
  return text;
}

const VariableRegistry& default_registry() {
  static const VariableRegistry reg = parse_registry_text(default_registry_text());
  return reg;
}

}  // namespace medfuse

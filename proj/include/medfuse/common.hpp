#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace medfuse {

// All numeric work runs in double precision; finite-difference checks need it.
using Scalar = double;
using Index = Eigen::Index;

using ArrayXs = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
using VectorXs = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
// Row-major so matrix views map directly onto flat tensor storage.
using MatrixXs = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixXs>;
using ConstMatMap = Eigen::Map<const MatrixXs>;
using ArrMap = Eigen::Map<ArrayXs>;
using ConstArrMap = Eigen::Map<const ArrayXs>;

using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Input that violates a documented precondition (bad config, bad file content).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Tensor shapes that cannot be combined; message names the offending shapes.
class DimensionError : public ValidationError {
 public:
  explicit DimensionError(const std::string& what) : ValidationError(what) {}
};

/// Metric that is undefined on the given inputs (e.g. single-class AUROC).
class UndefinedMetricError : public ValidationError {
 public:
  explicit UndefinedMetricError(const std::string& what) : ValidationError(what) {}
};

/// Caller broke an API contract (programming error, not data error).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Deterministic random source. Distribution transforms are implemented here
/// rather than with <random> distributions, whose output is
/// implementation-defined; results are therefore reproducible across
/// standard libraries for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  Scalar uniform();
  Scalar uniform(Scalar lo, Scalar hi);
  /// Standard normal via Box-Muller.
  Scalar normal();
  Scalar normal(Scalar mean, Scalar stddev);
  /// Uniform integer in [0, n).
  Index uniform_index(Index n);
  bool bernoulli(Scalar p);
  /// Deterministic Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (Index i = static_cast<Index>(items.size()) - 1; i > 0; --i) {
      const Index j = uniform_index(i + 1);
      std::swap(items[static_cast<std::size_t>(i)], items[static_cast<std::size_t>(j)]);
    }
  }
  /// Independent child stream identified by `stream`; derivation is stable
  /// under the parent's draw history.
  Rng derive(std::uint64_t stream) const;
  std::uint64_t seed() const { return seed_; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_ = 0;
  bool has_spare_ = false;
  Scalar spare_ = 0.0;
};

/// 64-bit FNV-1a, used to fingerprint registry files and derive seeds.
std::uint64_t fnv1a64(const void* data, std::size_t n);
std::uint64_t fnv1a64(const std::string& text);
std::string hex64(std::uint64_t value);

/// Inverse standard normal CDF (Acklam's rational approximation, ~1e-9).
Scalar inverse_normal_cdf(Scalar p);

}  // namespace medfuse

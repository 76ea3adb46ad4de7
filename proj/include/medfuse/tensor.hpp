#pragma once

#include <functional>
#include <initializer_list>
#include <memory>

#include "medfuse/common.hpp"

namespace medfuse {

class Tape;

/// Dense n-dimensional array of doubles in flat row-major storage, with an
/// optional gradient buffer of the same length. Copying a Tensor copies the
/// handle, not the storage; the shape is fixed at construction.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, Scalar value);
  static Tensor from_data(Shape shape, std::vector<Scalar> values);
  static Tensor from_values(Shape shape, std::initializer_list<Scalar> values);
  static Tensor scalar_value(Scalar value);
  /// Uniform fill in [lo, hi); the standard init helper for weights.
  static Tensor uniform(Shape shape, Scalar lo, Scalar hi, Rng& rng,
                        bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  Index dim(int axis) const;
  Index numel() const;
  /// Rank-2 accessors.
  Index rows() const { return dim(0); }
  Index cols() const { return dim(1); }

  Scalar* data();
  const Scalar* data() const;
  ArrMap array();
  ConstArrMap array() const;
  /// Matrix view of a rank-2 tensor.
  MatMap matrix();
  ConstMatMap matrix() const;
  /// Matrix view reinterpreting the flat storage as rows x cols.
  MatMap matrix(Index rows, Index cols);
  ConstMatMap matrix(Index rows, Index cols) const;

  /// Value of a one-element tensor.
  Scalar value() const;
  Scalar at(Index i) const;
  Scalar at(Index i, Index j) const;
  Scalar at(Index i, Index j, Index k) const;
  Scalar at(Index i, Index j, Index k, Index l) const;

  bool requires_grad() const;
  void set_requires_grad(bool requires_grad);
  bool has_grad() const;
  Scalar* grad_data();
  ArrMap grad_array();
  ConstArrMap grad_array() const;
  /// Allocates (zero-filled) the gradient buffer if absent.
  void ensure_grad();
  void zero_grad();

  /// Deep copy of the data; the copy is a leaf with no gradient.
  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    ArrayXs data;
    bool requires_grad = false;
    bool has_grad = false;
    ArrayXs grad;
  };
  std::shared_ptr<Impl> impl_;

  Impl& impl();
  const Impl& impl() const;
  friend class Tape;
};

/// Records one backward rule per primitive in forward order and replays them
/// in reverse. A tape belongs to a single forward pass on a single thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const Tensor& output, std::function<void()> backward_fn);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse, accumulating
  /// into leaf gradients. Gradients of non-leaf node outputs are reset before
  /// the sweep, so calling backward twice without zeroing leaf gradients
  /// doubles them.
  void backward(const Tensor& loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::shared_ptr<Tensor::Impl> output;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
};

/// RAII activation of a tape on the current thread. Primitives record onto
/// the active tape; without one they compute values only.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

}  // namespace medfuse

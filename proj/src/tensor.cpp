#include "medfuse/tensor.hpp"

namespace medfuse {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tensor::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<Impl>()) {
  for (Index d : shape) {
    if (d <= 0) throw ValidationError("tensor extents must be positive, got " + shape_string(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = ArrayXs::Zero(medfuse::numel(impl_->shape));
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, Scalar value) {
  Tensor t(std::move(shape));
  t.array() = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<Scalar> values) {
  Tensor t(std::move(shape));
  if (t.numel() != static_cast<Index>(values.size())) {
    throw ValidationError("from_data: shape " + shape_string(t.shape()) + " holds " +
                          std::to_string(t.numel()) + " elements but " +
                          std::to_string(values.size()) + " values were given");
  }
  for (Index i = 0; i < t.numel(); ++i) t.data()[i] = values[static_cast<std::size_t>(i)];
  return t;
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<Scalar> values) {
  return from_data(std::move(shape), std::vector<Scalar>(values));
}

Tensor Tensor::scalar_value(Scalar value) { return full({1}, value); }

Tensor Tensor::uniform(Shape shape, Scalar lo, Scalar hi, Rng& rng, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  Scalar* p = t.data();
  for (Index i = 0; i < t.numel(); ++i) p[i] = rng.uniform(lo, hi);
  return t;
}

Tensor::Impl& Tensor::impl() {
  if (!impl_) throw ContractError("use of undefined tensor");
  return *impl_;
}

const Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }
int Tensor::rank() const { return static_cast<int>(impl().shape.size()); }

Index Tensor::dim(int axis) const {
  const Shape& s = impl().shape;
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ContractError("dim(" + std::to_string(axis) + ") on tensor of shape " + shape_string(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

Index Tensor::numel() const { return impl().data.size(); }

Scalar* Tensor::data() { return impl().data.data(); }
const Scalar* Tensor::data() const { return impl().data.data(); }

ArrMap Tensor::array() { return ArrMap(data(), numel()); }
ConstArrMap Tensor::array() const { return ConstArrMap(data(), numel()); }

MatMap Tensor::matrix() {
  if (rank() != 2) throw ContractError("matrix() on tensor of shape " + shape_string(shape()));
  return MatMap(data(), dim(0), dim(1));
}

ConstMatMap Tensor::matrix() const {
  if (rank() != 2) throw ContractError("matrix() on tensor of shape " + shape_string(shape()));
  return ConstMatMap(data(), dim(0), dim(1));
}

MatMap Tensor::matrix(Index rows, Index cols) {
  if (rows * cols != numel()) {
    throw ContractError("matrix(" + std::to_string(rows) + ", " + std::to_string(cols) +
                        ") does not cover tensor of shape " + shape_string(shape()));
  }
  return MatMap(data(), rows, cols);
}

ConstMatMap Tensor::matrix(Index rows, Index cols) const {
  if (rows * cols != numel()) {
    throw ContractError("matrix(" + std::to_string(rows) + ", " + std::to_string(cols) +
                        ") does not cover tensor of shape " + shape_string(shape()));
  }
  return ConstMatMap(data(), rows, cols);
}

Scalar Tensor::value() const {
  if (numel() != 1) throw ContractError("value() on non-scalar tensor " + shape_string(shape()));
  return data()[0];
}

Scalar Tensor::at(Index i) const { return impl().data(i); }
Scalar Tensor::at(Index i, Index j) const { return impl().data(i * dim(1) + j); }
Scalar Tensor::at(Index i, Index j, Index k) const {
  return impl().data((i * dim(1) + j) * dim(2) + k);
}
Scalar Tensor::at(Index i, Index j, Index k, Index l) const {
  return impl().data(((i * dim(1) + j) * dim(2) + k) * dim(3) + l);
}

bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool requires_grad) { impl().requires_grad = requires_grad; }
bool Tensor::has_grad() const { return impl().has_grad; }

Scalar* Tensor::grad_data() {
  if (!has_grad()) throw ContractError("gradient not populated for tensor " + shape_string(shape()));
  return impl().grad.data();
}

ArrMap Tensor::grad_array() { return ArrMap(grad_data(), numel()); }

ConstArrMap Tensor::grad_array() const {
  if (!has_grad()) throw ContractError("gradient not populated for tensor " + shape_string(shape()));
  return ConstArrMap(impl().grad.data(), numel());
}

void Tensor::ensure_grad() {
  Impl& im = impl();
  if (!im.has_grad) {
    im.grad = ArrayXs::Zero(im.data.size());
    im.has_grad = true;
  }
}

void Tensor::zero_grad() {
  Impl& im = impl();
  if (im.has_grad) im.grad.setZero();
}

Tensor Tensor::clone() const {
  Tensor t(shape());
  t.array() = array();
  return t;
}

void Tape::record(const Tensor& output, std::function<void()> backward_fn) {
  nodes_.push_back(Node{output.impl_, std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  // Non-leaf gradients are scratch space for the sweep; reset them so only
  // leaf gradients accumulate across calls.
  for (Node& node : nodes_) {
    if (node.output->requires_grad) {
      if (!node.output->has_grad) {
        node.output->grad = ArrayXs::Zero(node.output->data.size());
        node.output->has_grad = true;
      } else {
        node.output->grad.setZero();
      }
    }
  }
  Tensor seed = loss;
  seed.ensure_grad();
  seed.grad_array()(0) += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->requires_grad) it->fn();
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

}  // namespace medfuse

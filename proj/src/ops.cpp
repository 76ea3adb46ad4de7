#include "medfuse/ops.hpp"

#include <cmath>

namespace medfuse {

namespace {

bool tracking(const Tensor& a) { return active_tape() != nullptr && a.requires_grad(); }
bool tracking(const Tensor& a, const Tensor& b) {
  return active_tape() != nullptr && (a.requires_grad() || b.requires_grad());
}

void accumulate(Tensor t, const ArrayXs& g) {
  if (!t.requires_grad()) return;
  t.ensure_grad();
  t.grad_array() += g;
}

ArrayXs out_grad(const Tensor& out) { return ArrayXs(out.grad_array()); }

void check_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a rank-2 tensor, got " +
                         shape_string(t.shape()));
  }
}

// Number of leading repeats when b broadcasts over a; b's shape must equal a
// trailing suffix of a's shape.
Index broadcast_repeats(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) {
    throw DimensionError("cannot broadcast " + shape_string(b) + " over " + shape_string(a));
  }
  const std::size_t offset = a.size() - b.size();
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (a[offset + i] != b[i]) {
      throw DimensionError("shape mismatch: " + shape_string(a) + " vs " + shape_string(b));
    }
  }
  Index repeats = 1;
  for (std::size_t i = 0; i < offset; ++i) repeats *= a[i];
  return repeats;
}

enum class BinaryKind { add, sub, mul };

Tensor binary_op(BinaryKind kind, const Tensor& a, const Tensor& b) {
  const Index repeats = broadcast_repeats(a.shape(), b.shape());
  const Index inner = b.numel();
  Tensor out(a.shape());
  {
    ConstMatMap am = a.matrix(repeats, inner);
    ConstMatMap bm = b.matrix(1, inner);
    MatMap om = out.matrix(repeats, inner);
    switch (kind) {
      case BinaryKind::add: om = am.rowwise() + bm.row(0); break;
      case BinaryKind::sub: om = am.rowwise() - bm.row(0); break;
      case BinaryKind::mul: om = am.array().rowwise() * bm.row(0).array(); break;
    }
  }
  if (tracking(a, b)) {
    out.set_requires_grad(true);
    active_tape()->record(out, [kind, a, b, out, repeats, inner]() mutable {
      const ArrayXs g = out_grad(out);
      ConstMatMap gm(g.data(), repeats, inner);
      switch (kind) {
        case BinaryKind::add:
          accumulate(a, g);
          if (b.requires_grad()) accumulate(b, ArrayXs(gm.colwise().sum().transpose()));
          break;
        case BinaryKind::sub:
          accumulate(a, g);
          if (b.requires_grad()) accumulate(b, ArrayXs(-gm.colwise().sum().transpose()));
          break;
        case BinaryKind::mul: {
          if (a.requires_grad()) {
            ArrayXs da(a.numel());
            MatMap dam(da.data(), repeats, inner);
            dam = gm.array().rowwise() * ConstMatMap(b.data(), 1, inner).row(0).array();
            accumulate(a, da);
          }
          if (b.requires_grad()) {
            ConstMatMap am = a.matrix(repeats, inner);
            accumulate(b, ArrayXs((gm.array() * am.array()).colwise().sum().transpose()));
          }
          break;
        }
      }
    });
  }
  return out;
}

enum class UnaryKind { sigmoid, tanh, relu };

Tensor unary_op(UnaryKind kind, const Tensor& a) {
  Tensor out(a.shape());
  switch (kind) {
    case UnaryKind::sigmoid:
      for (Index i = 0; i < a.numel(); ++i) out.data()[i] = stable_sigmoid(a.data()[i]);
      break;
    case UnaryKind::tanh: out.array() = a.array().tanh(); break;
    case UnaryKind::relu: out.array() = a.array().max(0.0); break;
  }
  if (tracking(a)) {
    out.set_requires_grad(true);
    active_tape()->record(out, [kind, a, out]() mutable {
      const ArrayXs g = out_grad(out);
      ArrayXs da(a.numel());
      switch (kind) {
        case UnaryKind::sigmoid: {
          ConstArrMap y(out.data(), out.numel());
          da = g * y * (1.0 - y);
          break;
        }
        case UnaryKind::tanh: {
          ConstArrMap y(out.data(), out.numel());
          da = g * (1.0 - y * y);
          break;
        }
        case UnaryKind::relu:
          da = g * (ConstArrMap(a.data(), a.numel()) > 0.0).cast<Scalar>();
          break;
      }
      accumulate(a, da);
    });
  }
  return out;
}

}  // namespace

Scalar stable_sigmoid(Scalar x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (1.0 + e);
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(BinaryKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(BinaryKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(BinaryKind::mul, a, b); }

Tensor scale(const Tensor& a, Scalar factor) {
  Tensor out(a.shape());
  out.array() = a.array() * factor;
  if (tracking(a)) {
    out.set_requires_grad(true);
    active_tape()->record(out, [a, out, factor]() mutable {
      accumulate(a, ArrayXs(out_grad(out) * factor));
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& a) { return unary_op(UnaryKind::sigmoid, a); }
Tensor tanh(const Tensor& a) { return unary_op(UnaryKind::tanh, a); }
Tensor relu(const Tensor& a) { return unary_op(UnaryKind::relu, a); }

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  const Index m = transpose_a ? a.cols() : a.rows();
  const Index k = transpose_a ? a.rows() : a.cols();
  const Index k2 = transpose_b ? b.cols() : b.rows();
  const Index n = transpose_b ? b.rows() : b.cols();
  if (k != k2) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_string(a.shape()) +
                         (transpose_a ? "^T" : "") + " * " + shape_string(b.shape()) +
                         (transpose_b ? "^T" : ""));
  }
  Tensor out(Shape{m, n});
  {
    ConstMatMap am = a.matrix();
    ConstMatMap bm = b.matrix();
    MatMap om = out.matrix();
    if (!transpose_a && !transpose_b) om.noalias() = am * bm;
    else if (!transpose_a && transpose_b) om.noalias() = am * bm.transpose();
    else if (transpose_a && !transpose_b) om.noalias() = am.transpose() * bm;
    else om.noalias() = am.transpose() * bm.transpose();
  }
  if (tracking(a, b)) {
    out.set_requires_grad(true);
    active_tape()->record(out, [a, b, out, transpose_a, transpose_b]() mutable {
      ConstMatMap g(out.grad_array().data(), out.rows(), out.cols());
      ConstMatMap am = a.matrix();
      ConstMatMap bm = b.matrix();
      if (a.requires_grad()) {
        ArrayXs da(a.numel());
        MatMap dam(da.data(), a.rows(), a.cols());
        // d(op_a(A)) = G * op_b(B)^T, transposed back into A's layout.
        if (!transpose_a) {
          if (!transpose_b) dam.noalias() = g * bm.transpose();
          else dam.noalias() = g * bm;
        } else {
          if (!transpose_b) dam.noalias() = bm * g.transpose();
          else dam.noalias() = bm.transpose() * g.transpose();
        }
        accumulate(a, da);
      }
      if (b.requires_grad()) {
        ArrayXs db(b.numel());
        MatMap dbm(db.data(), b.rows(), b.cols());
        // d(op_b(B)) = op_a(A)^T * G, transposed back into B's layout.
        if (!transpose_b) {
          if (!transpose_a) dbm.noalias() = am.transpose() * g;
          else dbm.noalias() = am * g;
        } else {
          if (!transpose_a) dbm.noalias() = g.transpose() * am;
          else dbm.noalias() = g.transpose() * am.transpose();
        }
        accumulate(b, db);
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = Tensor::scalar_value(a.array().sum());
  if (tracking(a)) {
    out.set_requires_grad(true);
    active_tape()->record(out, [a, out]() mutable {
      accumulate(a, ArrayXs(ArrayXs::Constant(a.numel(), out.grad_array()(0))));
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  const Scalar inv = 1.0 / static_cast<Scalar>(a.numel());
  Tensor out = Tensor::scalar_value(a.array().sum() * inv);
  if (tracking(a)) {
    out.set_requires_grad(true);
    active_tape()->record(out, [a, out, inv]() mutable {
      accumulate(a, ArrayXs(ArrayXs::Constant(a.numel(), out.grad_array()(0) * inv)));
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, Index start, Index count) {
  check_rank2(a, "slice_cols");
  if (start < 0 || count <= 0 || start + count > a.cols()) {
    throw DimensionError("slice_cols [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " +
                         shape_string(a.shape()));
  }
  Tensor out(Shape{a.rows(), count});
  out.matrix() = a.matrix().middleCols(start, count);
  if (tracking(a)) {
    out.set_requires_grad(true);
    active_tape()->record(out, [a, out, start, count]() mutable {
      ArrayXs da = ArrayXs::Zero(a.numel());
      MatMap dam(da.data(), a.rows(), a.cols());
      dam.middleCols(start, count) = ConstMatMap(out.grad_array().data(), out.rows(), out.cols());
      accumulate(a, da);
    });
  }
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  check_rank2(a, "concat_cols");
  check_rank2(b, "concat_cols");
  if (a.rows() != b.rows()) {
    throw DimensionError("concat_cols row mismatch: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  Tensor out(Shape{a.rows(), a.cols() + b.cols()});
  out.matrix().leftCols(a.cols()) = a.matrix();
  out.matrix().rightCols(b.cols()) = b.matrix();
  if (tracking(a, b)) {
    out.set_requires_grad(true);
    active_tape()->record(out, [a, b, out]() mutable {
      ConstMatMap g(out.grad_array().data(), out.rows(), out.cols());
      if (a.requires_grad()) {
        ArrayXs da(a.numel());
        MatMap(da.data(), a.rows(), a.cols()) = g.leftCols(a.cols());
        accumulate(a, da);
      }
      if (b.requires_grad()) {
        ArrayXs db(b.numel());
        MatMap(db.data(), b.rows(), b.cols()) = g.rightCols(b.cols());
        accumulate(b, db);
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<Index>& rows) {
  check_rank2(a, "gather_rows");
  for (Index r : rows) {
    if (r < 0 || r >= a.rows()) {
      throw DimensionError("gather_rows index " + std::to_string(r) + " out of range for " +
                           shape_string(a.shape()));
    }
  }
  Tensor out(Shape{static_cast<Index>(rows.size()), a.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.matrix().row(static_cast<Index>(i)) = a.matrix().row(rows[i]);
  }
  if (tracking(a)) {
    out.set_requires_grad(true);
    active_tape()->record(out, [a, out, rows]() mutable {
      ArrayXs da = ArrayXs::Zero(a.numel());
      MatMap dam(da.data(), a.rows(), a.cols());
      ConstMatMap g(out.grad_array().data(), out.rows(), out.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        dam.row(rows[i]) += g.row(static_cast<Index>(i));
      }
      accumulate(a, da);
    });
  }
  return out;
}

Tensor merge_rows(const Tensor& base, const Tensor& updates, const std::vector<Index>& rows) {
  check_rank2(base, "merge_rows");
  check_rank2(updates, "merge_rows");
  if (updates.cols() != base.cols() || updates.rows() != static_cast<Index>(rows.size())) {
    throw DimensionError("merge_rows: updates " + shape_string(updates.shape()) +
                         " do not fit base " + shape_string(base.shape()) + " with " +
                         std::to_string(rows.size()) + " rows");
  }
  std::vector<bool> seen(static_cast<std::size_t>(base.rows()), false);
  for (Index r : rows) {
    if (r < 0 || r >= base.rows()) {
      throw DimensionError("merge_rows index " + std::to_string(r) + " out of range for " +
                           shape_string(base.shape()));
    }
    if (seen[static_cast<std::size_t>(r)]) {
      throw ContractError("merge_rows: duplicate row index " + std::to_string(r));
    }
    seen[static_cast<std::size_t>(r)] = true;
  }
  Tensor out(base.shape());
  out.matrix() = base.matrix();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.matrix().row(rows[i]) = updates.matrix().row(static_cast<Index>(i));
  }
  if (tracking(base, updates)) {
    out.set_requires_grad(true);
    active_tape()->record(out, [base, updates, out, rows]() mutable {
      ConstMatMap g(out.grad_array().data(), out.rows(), out.cols());
      if (base.requires_grad()) {
        ArrayXs db(base.numel());
        MatMap dbm(db.data(), base.rows(), base.cols());
        dbm = g;
        for (Index r : rows) dbm.row(r).setZero();
        accumulate(base, db);
      }
      if (updates.requires_grad()) {
        ArrayXs du(updates.numel());
        MatMap dum(du.data(), updates.rows(), updates.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          dum.row(static_cast<Index>(i)) = g.row(rows[i]);
        }
        accumulate(updates, du);
      }
    });
  }
  return out;
}

Tensor assemble_rows(Index total_rows, const Tensor& part, const std::vector<Index>& part_rows,
                     const Tensor& fill) {
  if (fill.rank() != 1) {
    throw DimensionError("assemble_rows fill must be rank-1, got " + shape_string(fill.shape()));
  }
  const Index cols = fill.dim(0);
  if (!part_rows.empty()) {
    check_rank2(part, "assemble_rows");
    if (part.rows() != static_cast<Index>(part_rows.size()) || part.cols() != cols) {
      throw DimensionError("assemble_rows: part " + shape_string(part.shape()) +
                           " does not match fill " + shape_string(fill.shape()) + " and " +
                           std::to_string(part_rows.size()) + " rows");
    }
  }
  std::vector<bool> placed(static_cast<std::size_t>(total_rows), false);
  for (Index r : part_rows) {
    if (r < 0 || r >= total_rows) {
      throw DimensionError("assemble_rows index " + std::to_string(r) + " out of range for " +
                           std::to_string(total_rows) + " rows");
    }
    if (placed[static_cast<std::size_t>(r)]) {
      throw ContractError("assemble_rows: duplicate row index " + std::to_string(r));
    }
    placed[static_cast<std::size_t>(r)] = true;
  }
  Tensor out(Shape{total_rows, cols});
  {
    MatMap om = out.matrix();
    ConstMatMap fm = fill.matrix(1, cols);
    for (Index r = 0; r < total_rows; ++r) om.row(r) = fm.row(0);
    for (std::size_t i = 0; i < part_rows.size(); ++i) {
      om.row(part_rows[i]) = part.matrix().row(static_cast<Index>(i));
    }
  }
  const bool track_part = !part_rows.empty() && part.requires_grad();
  if (active_tape() != nullptr && (track_part || fill.requires_grad())) {
    out.set_requires_grad(true);
    active_tape()->record(out, [part, fill, out, part_rows, placed, track_part]() mutable {
      ConstMatMap g(out.grad_array().data(), out.rows(), out.cols());
      if (track_part) {
        ArrayXs dp(part.numel());
        MatMap dpm(dp.data(), part.rows(), part.cols());
        for (std::size_t i = 0; i < part_rows.size(); ++i) {
          dpm.row(static_cast<Index>(i)) = g.row(part_rows[i]);
        }
        accumulate(part, dp);
      }
      if (fill.requires_grad()) {
        ArrayXs df = ArrayXs::Zero(fill.numel());
        MatMap dfm(df.data(), 1, fill.numel());
        for (Index r = 0; r < out.rows(); ++r) {
          if (!placed[static_cast<std::size_t>(r)]) dfm.row(0) += g.row(r);
        }
        accumulate(fill, df);
      }
    });
  }
  return out;
}

Tensor slice_time(const Tensor& x, Index t) {
  if (x.rank() != 3) {
    throw DimensionError("slice_time expects a rank-3 tensor, got " + shape_string(x.shape()));
  }
  const Index batch = x.dim(0), steps = x.dim(1), feat = x.dim(2);
  if (t < 0 || t >= steps) {
    throw DimensionError("slice_time step " + std::to_string(t) + " out of range for " +
                         shape_string(x.shape()));
  }
  Tensor out(Shape{batch, feat});
  for (Index b = 0; b < batch; ++b) {
    out.matrix().row(b) = ConstMatMap(x.data() + (b * steps + t) * feat, 1, feat).row(0);
  }
  if (tracking(x)) {
    out.set_requires_grad(true);
    active_tape()->record(out, [x, out, t, batch, steps, feat]() mutable {
      ArrayXs dx = ArrayXs::Zero(x.numel());
      ConstMatMap g(out.grad_array().data(), batch, feat);
      for (Index b = 0; b < batch; ++b) {
        MatMap(dx.data() + (b * steps + t) * feat, 1, feat).row(0) = g.row(b);
      }
      accumulate(x, dx);
    });
  }
  return out;
}

namespace {

struct ConvDims {
  Index batch, in_ch, in_h, in_w;
  Index out_ch, ksize, pad, stride;
  Index out_h, out_w;
};

ConvDims conv_dims(const Tensor& x, const Tensor& kernels, const Tensor& bias, Index stride) {
  if (x.rank() != 4) {
    throw DimensionError("conv2d input must be rank-4 (B x C x H x W), got " +
                         shape_string(x.shape()));
  }
  if (kernels.rank() != 4 || kernels.dim(2) != kernels.dim(3)) {
    throw DimensionError("conv2d kernels must be O x C x k x k, got " +
                         shape_string(kernels.shape()));
  }
  if (kernels.dim(2) % 2 == 0) {
    throw ValidationError("conv2d kernel size must be odd for same-padding, got " +
                          std::to_string(kernels.dim(2)));
  }
  if (x.dim(1) != kernels.dim(1)) {
    throw DimensionError("conv2d channel mismatch: input " + shape_string(x.shape()) +
                         " vs kernels " + shape_string(kernels.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != kernels.dim(0)) {
    throw DimensionError("conv2d bias " + shape_string(bias.shape()) +
                         " does not match kernels " + shape_string(kernels.shape()));
  }
  if (stride < 1) throw ValidationError("conv2d stride must be >= 1");
  ConvDims d;
  d.batch = x.dim(0);
  d.in_ch = x.dim(1);
  d.in_h = x.dim(2);
  d.in_w = x.dim(3);
  d.out_ch = kernels.dim(0);
  d.ksize = kernels.dim(2);
  d.pad = (d.ksize - 1) / 2;
  d.stride = stride;
  d.out_h = (d.in_h - 1) / stride + 1;
  d.out_w = (d.in_w - 1) / stride + 1;
  return d;
}

// Patch matrix (C*k*k) x (out_h*out_w) for one image.
void im2col(const Scalar* img, const ConvDims& d, MatrixXs& cols) {
  cols.setZero();
  for (Index c = 0; c < d.in_ch; ++c) {
    for (Index ki = 0; ki < d.ksize; ++ki) {
      for (Index kj = 0; kj < d.ksize; ++kj) {
        const Index row = (c * d.ksize + ki) * d.ksize + kj;
        for (Index oy = 0; oy < d.out_h; ++oy) {
          const Index iy = oy * d.stride + ki - d.pad;
          if (iy < 0 || iy >= d.in_h) continue;
          const Scalar* src = img + (c * d.in_h + iy) * d.in_w;
          Scalar* dst = cols.data() + row * d.out_h * d.out_w + oy * d.out_w;
          for (Index ox = 0; ox < d.out_w; ++ox) {
            const Index ix = ox * d.stride + kj - d.pad;
            if (ix >= 0 && ix < d.in_w) dst[ox] = src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const MatrixXs& cols, const ConvDims& d, Scalar* img) {
  for (Index c = 0; c < d.in_ch; ++c) {
    for (Index ki = 0; ki < d.ksize; ++ki) {
      for (Index kj = 0; kj < d.ksize; ++kj) {
        const Index row = (c * d.ksize + ki) * d.ksize + kj;
        for (Index oy = 0; oy < d.out_h; ++oy) {
          const Index iy = oy * d.stride + ki - d.pad;
          if (iy < 0 || iy >= d.in_h) continue;
          Scalar* dst = img + (c * d.in_h + iy) * d.in_w;
          const Scalar* src = cols.data() + row * d.out_h * d.out_w + oy * d.out_w;
          for (Index ox = 0; ox < d.out_w; ++ox) {
            const Index ix = ox * d.stride + kj - d.pad;
            if (ix >= 0 && ix < d.in_w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, Index stride) {
  const ConvDims d = conv_dims(x, kernels, bias, stride);
  Tensor out(Shape{d.batch, d.out_ch, d.out_h, d.out_w});
  const Index patch = d.in_ch * d.ksize * d.ksize;
  const Index plane = d.out_h * d.out_w;
  {
    MatrixXs cols(patch, plane);
    ConstMatMap kmat(kernels.data(), d.out_ch, patch);
    ConstMatMap bvec(bias.data(), d.out_ch, 1);
    for (Index b = 0; b < d.batch; ++b) {
      im2col(x.data() + b * d.in_ch * d.in_h * d.in_w, d, cols);
      MatMap omat(out.data() + b * d.out_ch * plane, d.out_ch, plane);
      omat.noalias() = kmat * cols;
      omat.colwise() += bvec.col(0);
    }
  }
  if (active_tape() != nullptr &&
      (x.requires_grad() || kernels.requires_grad() || bias.requires_grad())) {
    Tensor outt = out;
    outt.set_requires_grad(true);
    active_tape()->record(outt, [x, kernels, bias, outt, d, patch, plane]() mutable {
      MatrixXs cols(patch, plane);
      MatrixXs dcols(patch, plane);
      ConstMatMap kmat(kernels.data(), d.out_ch, patch);
      ArrayXs dk = ArrayXs::Zero(kernels.numel());
      MatMap dkmat(dk.data(), d.out_ch, patch);
      ArrayXs db = ArrayXs::Zero(bias.numel());
      ArrayXs dx;
      if (x.requires_grad()) dx = ArrayXs::Zero(x.numel());
      for (Index b = 0; b < d.batch; ++b) {
        ConstMatMap g(outt.grad_array().data() + b * d.out_ch * plane, d.out_ch, plane);
        if (kernels.requires_grad() || x.requires_grad()) {
          im2col(x.data() + b * d.in_ch * d.in_h * d.in_w, d, cols);
        }
        if (kernels.requires_grad()) dkmat.noalias() += g * cols.transpose();
        if (bias.requires_grad()) db += g.rowwise().sum().array();
        if (x.requires_grad()) {
          dcols.noalias() = kmat.transpose() * g;
          col2im_add(dcols, d, dx.data() + b * d.in_ch * d.in_h * d.in_w);
        }
      }
      if (kernels.requires_grad()) accumulate(kernels, dk);
      if (bias.requires_grad()) accumulate(bias, db);
      if (x.requires_grad()) accumulate(x, dx);
    });
    return outt;
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) {
    throw DimensionError("global_avg_pool expects B x C x H x W, got " + shape_string(x.shape()));
  }
  const Index batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out(Shape{batch, ch});
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < ch; ++c) {
      out.data()[b * ch + c] =
          ConstArrMap(x.data() + (b * ch + c) * plane, plane).mean();
    }
  }
  if (tracking(x)) {
    out.set_requires_grad(true);
    active_tape()->record(out, [x, out, batch, ch, plane]() mutable {
      const Scalar inv = 1.0 / static_cast<Scalar>(plane);
      ArrayXs dx(x.numel());
      for (Index b = 0; b < batch; ++b) {
        for (Index c = 0; c < ch; ++c) {
          dx.segment((b * ch + c) * plane, plane) =
              out.grad_array()(b * ch + c) * inv;
        }
      }
      accumulate(x, dx);
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, Scalar rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ValidationError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const Scalar keep_scale = 1.0 / (1.0 - rate);
  auto factors = std::make_shared<ArrayXs>(x.numel());
  for (Index i = 0; i < x.numel(); ++i) {
    (*factors)(i) = rng.uniform() < rate ? 0.0 : keep_scale;
  }
  Tensor out(x.shape());
  out.array() = x.array() * (*factors);
  if (tracking(x)) {
    out.set_requires_grad(true);
    active_tape()->record(out, [x, out, factors]() mutable {
      accumulate(x, ArrayXs(out_grad(out) * (*factors)));
    });
  }
  return out;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    throw DimensionError("bce_with_logits shape mismatch: " + shape_string(logits.shape()) +
                         " vs " + shape_string(targets.shape()));
  }
  const Index n = logits.numel();
  for (Index i = 0; i < n; ++i) {
    const Scalar y = targets.data()[i];
    if (y != 0.0 && y != 1.0) {
      throw ValidationError("bce_with_logits targets must be exactly 0 or 1, got " +
                            std::to_string(y));
    }
    if (!std::isfinite(logits.data()[i])) {
      throw ValidationError("bce_with_logits logits must be finite");
    }
  }
  Scalar total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Scalar l = logits.data()[i];
    const Scalar y = targets.data()[i];
    total += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
  }
  Tensor out = Tensor::scalar_value(total / static_cast<Scalar>(n));
  if (tracking(logits)) {
    out.set_requires_grad(true);
    active_tape()->record(out, [logits, targets, out, n]() mutable {
      const Scalar g0 = out.grad_array()(0) / static_cast<Scalar>(n);
      ArrayXs dl(n);
      for (Index i = 0; i < n; ++i) {
        dl(i) = (stable_sigmoid(logits.data()[i]) - targets.data()[i]) * g0;
      }
      accumulate(logits, dl);
    });
  }
  return out;
}

}  // namespace medfuse

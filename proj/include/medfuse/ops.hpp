#pragma once

#include "medfuse/tensor.hpp"

namespace medfuse {

// Differentiable primitives over Tensors. Each op computes its value with
// Eigen and, when a tape is active and an input requires a gradient, records
// a backward rule onto it. Binary elementwise ops accept a right operand
// whose shape is a trailing suffix of the left one (bias-style broadcast
// along leading axes).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar factor);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);

/// Matrix product of rank-2 tensors, with optional transposition of either
/// operand. Backward: d(A) = d(C) * B^T and d(B) = A^T * d(C), adjusted for
/// the transpose flags.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);

/// Scalar sum / mean of all elements.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Columns [start, start+count) of a rank-2 tensor.
Tensor slice_cols(const Tensor& a, Index start, Index count);
/// Row-wise concatenation [a | b] of rank-2 tensors.
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// Rows of a rank-2 tensor selected by index, in the given order.
Tensor gather_rows(const Tensor& a, const std::vector<Index>& rows);
/// Copy of `base` with row `rows[i]` replaced by `updates` row i.
Tensor merge_rows(const Tensor& base, const Tensor& updates, const std::vector<Index>& rows);
/// Builds a (total_rows x C) tensor: row `part_rows[i]` is `part` row i,
/// every other row is the rank-1 `fill` vector. `part` may be undefined when
/// part_rows is empty.
Tensor assemble_rows(Index total_rows, const Tensor& part, const std::vector<Index>& part_rows,
                     const Tensor& fill);
/// Time slice x[:, t, :] of a rank-3 tensor.
Tensor slice_time(const Tensor& x, Index t);

/// 2-D cross-correlation with same-padding (odd square kernels).
/// x: B x C x H x W, kernels: O x C x k x k, bias: O.
/// Output spatial extent per axis is floor((H-1)/stride)+1.
Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, Index stride);

/// Mean over each H x W plane: B x C x H x W -> B x C.
Tensor global_avg_pool(const Tensor& x);

/// Inverted dropout: zeroes activations with probability `rate` and scales
/// survivors by 1/(1-rate). Identity when rate == 0 or not training.
Tensor dropout(const Tensor& x, Scalar rate, bool training, Rng& rng);

/// Mean binary cross-entropy over all elements, computed from logits in the
/// stable form max(l,0) - l*y + log(1+exp(-|l|)). Targets must be exactly
/// 0 or 1.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

Scalar stable_sigmoid(Scalar x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, Scalar factor) { return scale(a, factor); }
inline Tensor operator*(Scalar factor, const Tensor& a) { return scale(a, factor); }

}  // namespace medfuse

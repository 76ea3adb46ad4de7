// Independent reference implementations used to check the library. These are
// deliberately naive (loops and pairwise counts) and share no code with the
// implementations they verify.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "medfuse/tensor.hpp"

namespace oracle {

using medfuse::Index;
using medfuse::Scalar;
using medfuse::Tensor;

// Triple-loop matrix product: a is (m x k), b is (k x n), row-major.
inline std::vector<Scalar> matmul(const std::vector<Scalar>& a, const std::vector<Scalar>& b,
                                  Index m, Index k, Index n) {
  std::vector<Scalar> c(static_cast<std::size_t>(m * n), 0.0);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) {
      Scalar acc = 0.0;
      for (Index p = 0; p < k; ++p) {
        acc += a[static_cast<std::size_t>(i * k + p)] * b[static_cast<std::size_t>(p * n + j)];
      }
      c[static_cast<std::size_t>(i * n + j)] = acc;
    }
  }
  return c;
}

// Nested-loop same-padded cross-correlation matching conv2d's contract.
inline std::vector<Scalar> conv2d(const std::vector<Scalar>& x, Index batch, Index in_ch,
                                  Index h, Index w, const std::vector<Scalar>& kernels,
                                  Index out_ch, Index ksize, const std::vector<Scalar>& bias,
                                  Index stride) {
  const Index pad = (ksize - 1) / 2;
  const Index oh = (h - 1) / stride + 1;
  const Index ow = (w - 1) / stride + 1;
  std::vector<Scalar> out(static_cast<std::size_t>(batch * out_ch * oh * ow), 0.0);
  for (Index b = 0; b < batch; ++b) {
    for (Index o = 0; o < out_ch; ++o) {
      for (Index oy = 0; oy < oh; ++oy) {
        for (Index ox = 0; ox < ow; ++ox) {
          Scalar acc = bias[static_cast<std::size_t>(o)];
          for (Index c = 0; c < in_ch; ++c) {
            for (Index ki = 0; ki < ksize; ++ki) {
              for (Index kj = 0; kj < ksize; ++kj) {
                const Index iy = oy * stride + ki - pad;
                const Index ix = ox * stride + kj - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += x[static_cast<std::size_t>(((b * in_ch + c) * h + iy) * w + ix)] *
                       kernels[static_cast<std::size_t>(((o * in_ch + c) * ksize + ki) * ksize + kj)];
              }
            }
          }
          out[static_cast<std::size_t>(((b * out_ch + o) * oh + oy) * ow + ox)] = acc;
        }
      }
    }
  }
  return out;
}

inline Scalar sigmoid(Scalar x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar LSTM step over one batch row; gate order (input, forget, cell,
// output) packed along the 4H dimension.
struct LstmStepResult {
  std::vector<Scalar> h;
  std::vector<Scalar> c;
};

inline LstmStepResult lstm_step(const std::vector<Scalar>& w_ih, const std::vector<Scalar>& w_hh,
                                const std::vector<Scalar>& bias, const std::vector<Scalar>& x,
                                const std::vector<Scalar>& h_prev,
                                const std::vector<Scalar>& c_prev, Index input_dim,
                                Index hidden_dim) {
  std::vector<Scalar> pre(static_cast<std::size_t>(4 * hidden_dim), 0.0);
  for (Index r = 0; r < 4 * hidden_dim; ++r) {
    Scalar acc = bias[static_cast<std::size_t>(r)];
    for (Index d = 0; d < input_dim; ++d) {
      acc += w_ih[static_cast<std::size_t>(r * input_dim + d)] * x[static_cast<std::size_t>(d)];
    }
    for (Index d = 0; d < hidden_dim; ++d) {
      acc += w_hh[static_cast<std::size_t>(r * hidden_dim + d)] * h_prev[static_cast<std::size_t>(d)];
    }
    pre[static_cast<std::size_t>(r)] = acc;
  }
  LstmStepResult out;
  out.h.resize(static_cast<std::size_t>(hidden_dim));
  out.c.resize(static_cast<std::size_t>(hidden_dim));
  for (Index j = 0; j < hidden_dim; ++j) {
    const Scalar i_gate = sigmoid(pre[static_cast<std::size_t>(j)]);
    const Scalar f_gate = sigmoid(pre[static_cast<std::size_t>(hidden_dim + j)]);
    const Scalar cand = std::tanh(pre[static_cast<std::size_t>(2 * hidden_dim + j)]);
    const Scalar o_gate = sigmoid(pre[static_cast<std::size_t>(3 * hidden_dim + j)]);
    const Scalar c = f_gate * c_prev[static_cast<std::size_t>(j)] + i_gate * cand;
    out.c[static_cast<std::size_t>(j)] = c;
    out.h[static_cast<std::size_t>(j)] = o_gate * std::tanh(c);
  }
  return out;
}

// Pairwise AUROC with half credit for ties.
inline Scalar auroc(const std::vector<Scalar>& scores, const std::vector<int>& labels) {
  Scalar wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<Scalar>(pairs);
}

// Trapezoidal area under the ROC curve enumerated at every distinct score.
inline Scalar roc_trapezoid(const std::vector<Scalar>& scores, const std::vector<int>& labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  Scalar n_pos = 0, n_neg = 0;
  for (int l : labels) (l == 1 ? n_pos : n_neg) += 1.0;
  Scalar area = 0.0, tp = 0.0, fp = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    Scalar dtp = 0.0, dfp = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? dtp : dfp) += 1.0;
      ++j;
    }
    // Trapezoid between consecutive curve points.
    area += (dfp / n_neg) * (tp + tp + dtp) / (2.0 * n_pos);
    tp += dtp;
    fp += dfp;
    i = j;
  }
  return area;
}

// Average precision by enumerating the precision-recall curve at every
// distinct score threshold.
inline Scalar average_precision(const std::vector<Scalar>& scores, const std::vector<int>& labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  Scalar n_pos = 0;
  for (int l : labels) n_pos += l;
  Scalar area = 0.0, tp = 0.0, fp = 0.0, prev_recall = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp) += 1.0;
      ++j;
    }
    const Scalar recall = tp / n_pos;
    const Scalar precision = tp / (tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return area;
}

// BCE from clamped probabilities; checks the stable-logit implementation.
inline Scalar bce_clamped(const std::vector<Scalar>& logits, const std::vector<Scalar>& targets) {
  Scalar total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const Scalar p = std::clamp(sigmoid(logits[i]), 1e-12, 1.0 - 1e-12);
    total += -(targets[i] * std::log(p) + (1.0 - targets[i]) * std::log(1.0 - p));
  }
  return total / static_cast<Scalar>(logits.size());
}

// Central finite differences against the analytic gradients of `params`.
// `loss_fn` must be a pure function of the parameter values.
struct GradCheckResult {
  Scalar max_abs_err = 0.0;
  Scalar max_rel_err = 0.0;
  bool ok = true;
};

inline GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn,
                                       const std::vector<Tensor>& params, Scalar step = 1e-4,
                                       Scalar rel_tol = 1e-5, Scalar abs_tol = 1e-7) {
  using medfuse::Tape;
  using medfuse::TapeScope;
  for (const Tensor& p : params) {
    Tensor t = p;
    t.ensure_grad();
    t.zero_grad();
  }
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<std::vector<Scalar>> analytic;
  for (const Tensor& p : params) {
    std::vector<Scalar> g(static_cast<std::size_t>(p.numel()), 0.0);
    if (p.has_grad()) {
      for (Index i = 0; i < p.numel(); ++i) g[static_cast<std::size_t>(i)] = p.grad_array()(i);
    }
    analytic.push_back(std::move(g));
  }

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    for (Index i = 0; i < p.numel(); ++i) {
      const Scalar saved = p.data()[i];
      p.data()[i] = saved + step;
      const Scalar up = loss_fn().value();
      p.data()[i] = saved - step;
      const Scalar down = loss_fn().value();
      p.data()[i] = saved;
      const Scalar fd = (up - down) / (2.0 * step);
      const Scalar a = analytic[pi][static_cast<std::size_t>(i)];
      const Scalar abs_err = std::abs(a - fd);
      const Scalar rel_err = abs_err / std::max({std::abs(a), std::abs(fd), 1e-12});
      result.max_abs_err = std::max(result.max_abs_err, abs_err);
      result.max_rel_err = std::max(result.max_rel_err, rel_err);
      if (abs_err > abs_tol && rel_err > rel_tol) result.ok = false;
    }
  }
  return result;
}

inline std::vector<Scalar> tensor_values(const Tensor& t) {
  return std::vector<Scalar>(t.data(), t.data() + t.numel());
}

}  // namespace oracle

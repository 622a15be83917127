// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ssp/tape.hpp"
#include "ssp/tensor.hpp"

namespace ssp {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double silu(double x) { return x * sigmoid(x); }

}  // namespace ssp

namespace ssp::ops {

enum class Unary { kSilu, kSoftplus, kExp, kLog, kNeg, kSigmoid };
enum class Binary { kAdd, kSub, kMul, kDiv };

/// Right-aligned broadcast: missing leading axes count as 1 and only an
/// extent of 1 may stretch. Throws DimensionError otherwise.
Shape broadcast_shape(const Shape& a, const Shape& b);

Var matmul(Var a, Var b);

Var elementwise(Unary op, Var a);
Var elementwise(Binary op, Var a, Var b);

inline Var add(Var a, Var b) { return elementwise(Binary::kAdd, a, b); }
inline Var sub(Var a, Var b) { return elementwise(Binary::kSub, a, b); }
inline Var mul(Var a, Var b) { return elementwise(Binary::kMul, a, b); }
inline Var div(Var a, Var b) { return elementwise(Binary::kDiv, a, b); }
inline Var silu(Var a) { return elementwise(Unary::kSilu, a); }
inline Var softplus(Var a) { return elementwise(Unary::kSoftplus, a); }
inline Var exp(Var a) { return elementwise(Unary::kExp, a); }
inline Var log(Var a) { return elementwise(Unary::kLog, a); }
inline Var neg(Var a) { return elementwise(Unary::kNeg, a); }
inline Var sigmoid(Var a) { return elementwise(Unary::kSigmoid, a); }

Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
/// max(a, lo) elementwise; gradient passes only where a > lo.
Var clamp_min(Var a, double lo);

/// Max-shifted softmax along one axis.
Var softmax(Var x, std::size_t axis);

/// Sum of all elements, shape [1].
Var sum(Var x);
// Axis reductions keep the reduced axis with extent 1.
Var sum_axis(Var x, std::size_t axis);
Var mean_axis(Var x, std::size_t axis);
/// Gradient flows to the first maximal element.
Var max_axis(Var x, std::size_t axis);

Var reshape(Var x, Shape shape);
Var transpose(Var x);
Var broadcast_to(Var x, Shape shape);

struct RowRef {
  std::size_t source;
  std::size_t row;
};
/// Builds a matrix whose rows are copied from rank-2 sources with equal
/// column counts.
Var gather_rows(const std::vector<Var>& sources, const std::vector<RowRef>& rows);
Var rows(Var x, std::size_t begin, std::size_t count);
Var reverse_rows(Var x);
/// Columns [begin, begin + count) of a rank-2 tensor.
Var slice_cols(Var x, std::size_t begin, std::size_t count);

/// Row-wise x / sqrt(mean(x^2) + eps) * gain.
Var rmsnorm(Var x, Var gain, double eps = 1e-6);

/// Per-channel 3x3 convolution with zero "same" padding. x is [Nh x Nw x c]
/// or a stack [T x Nh x Nw x c]; kernel is [3 x 3 x c].
Var conv2d_depthwise(Var x, Var kernel);

/// y[i] = bias + sum_t kernel[t] * x[i - (k-1) + t], per channel, zero history.
Var causal_conv1d(Var x, Var kernel, Var bias);

/// -log softmax(logits)[label] for a single logit vector.
Var cross_entropy(Var logits, std::size_t label);

}  // namespace ssp::ops

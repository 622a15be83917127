// SPDX-License-Identifier: Apache-2.0
#include "ssp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include <Eigen/Core>

#include "ssp/errors.hpp"
#include "vec_math.hpp"

namespace ssp::ops {

namespace {

using RowMatrixType = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrix = Eigen::Map<RowMatrixType>;
using ConstRowMatrix = Eigen::Map<const RowMatrixType>;

Tape& tape_of(Var v) {
  if (!v.tape) throw ContractError("operation on an unbound Var");
  return *v.tape;
}

void check_axis(const Shape& shape, std::size_t axis, const char* what) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(what) + ": axis " + std::to_string(axis) + " invalid for shape " +
                         to_string(shape));
  }
}

// Splits a shape around `axis` into (outer, extent, inner) for strided loops.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape reduced_shape(Shape shape, std::size_t axis) {
  shape[axis] = 1;
  return shape;
}

// For each output element, the flat index of the corresponding element of an
// operand that broadcasts to `out`.
std::vector<std::size_t> broadcast_index(const Shape& operand, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - operand.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = operand.size(); i-- > 0;) {
    strides[i + offset] = operand[i] == 1 ? 0 : stride;
    stride *= operand[i];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t flat = 0;
  for (std::size_t k = 0; k < n; ++k) {
    idx[k] = flat;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++counter[ax];
      flat += strides[ax];
      if (counter[ax] < out[ax]) break;
      flat -= strides[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return idx;
}

// Same formulas as the scalar helpers in ops.hpp. The libm calls sit in loops
// of their own so each loop vectorizes.
void exp_neg_abs(const double* x, double* e, std::size_t n) {
  vecmath::blocked_map(x, e, n, [](double v) { return ::exp(-std::fabs(v)); });
}

// e holds exp(-|x|) on entry and logistic(x) on exit.
void logistic_from(const double* x, double* e, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) {
    const double num = x[i] >= 0.0 ? 1.0 : e[i];
    e[i] = num / (1.0 + e[i]);
  }
}

void unary_forward(Unary op, const double* x, double* y, std::size_t n) {
  switch (op) {
    case Unary::kSilu:
      exp_neg_abs(x, y, n);
      logistic_from(x, y, n);
      for (std::size_t i = 0; i < n; ++i) y[i] *= x[i];
      return;
    case Unary::kSoftplus:
      exp_neg_abs(x, y, n);
      vecmath::blocked_map(y, y, n, [](double v) { return ::log1p(v); });
      for (std::size_t i = 0; i < n; ++i) y[i] += x[i] > 0.0 ? x[i] : 0.0;
      return;
    case Unary::kExp:
      vecmath::blocked_map(x, y, n, [](double v) { return ::exp(v); });
      return;
    case Unary::kLog:
      for (std::size_t i = 0; i < n; ++i) y[i] = std::log(x[i]);
      return;
    case Unary::kNeg:
      for (std::size_t i = 0; i < n; ++i) y[i] = -x[i];
      return;
    case Unary::kSigmoid:
      exp_neg_abs(x, y, n);
      logistic_from(x, y, n);
      return;
  }
}

// g += gout * dy/dx
void unary_backward(Unary op, const double* x, const double* y, const double* gout, double* g, std::size_t n) {
  switch (op) {
    case Unary::kSilu:
    case Unary::kSoftplus: {
      std::vector<double> sg(n);
      exp_neg_abs(x, sg.data(), n);
      logistic_from(x, sg.data(), n);
      if (op == Unary::kSoftplus) {
        for (std::size_t i = 0; i < n; ++i) g[i] += gout[i] * sg[i];
      } else {
        for (std::size_t i = 0; i < n; ++i) g[i] += gout[i] * (sg[i] * (1.0 + x[i] * (1.0 - sg[i])));
      }
      return;
    }
    case Unary::kExp:
      for (std::size_t i = 0; i < n; ++i) g[i] += gout[i] * y[i];
      return;
    case Unary::kLog:
      for (std::size_t i = 0; i < n; ++i) g[i] += gout[i] * (1.0 / x[i]);
      return;
    case Unary::kNeg:
      for (std::size_t i = 0; i < n; ++i) g[i] += gout[i] * -1.0;
      return;
    case Unary::kSigmoid:
      for (std::size_t i = 0; i < n; ++i) g[i] += gout[i] * (y[i] * (1.0 - y[i]));
      return;
  }
}

OpKind unary_kind(Unary op) {
  switch (op) {
    case Unary::kSilu: return OpKind::kSilu;
    case Unary::kSoftplus: return OpKind::kSoftplus;
    case Unary::kExp: return OpKind::kExp;
    case Unary::kLog: return OpKind::kLog;
    case Unary::kNeg: return OpKind::kNeg;
    case Unary::kSigmoid: return OpKind::kSigmoid;
  }
  return OpKind::kNeg;
}

OpKind binary_kind(Binary op) {
  switch (op) {
    case Binary::kAdd: return OpKind::kAdd;
    case Binary::kSub: return OpKind::kSub;
    case Binary::kMul: return OpKind::kMul;
    case Binary::kDiv: return OpKind::kDiv;
  }
  return OpKind::kAdd;
}

double binary_forward(Binary op, double a, double b) {
  switch (op) {
    case Binary::kAdd: return a + b;
    case Binary::kSub: return a - b;
    case Binary::kMul: return a * b;
    case Binary::kDiv: return a / b;
  }
  return 0.0;
}

void require_rank2(const Shape& s, const char* what) {
  if (s.size() != 2) throw DimensionError(std::string(what) + " needs a rank-2 tensor, got " + to_string(s));
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("shapes " + to_string(a) + " and " + to_string(b) + " are not broadcastable");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

Var matmul(Var a, Var b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw DimensionError("matmul: cannot multiply " + to_string(sa) + " by " + to_string(sb));
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  auto fwd = [m, k, n](std::span<const Tensor* const> in) {
    Tensor out({m, n});
    RowMatrix(out.data().data(), m, n).noalias() = ConstRowMatrix(in[0]->data().data(), m, k) *
                                                   ConstRowMatrix(in[1]->data().data(), k, n);
    return out;
  };
  auto bwd = [m, k, n](const BackwardArgs& args) {
    const ConstRowMatrix g(args.gout.data(), m, n);
    if (double* ga = args.gin[0]) {
      RowMatrix(ga, m, k).noalias() += g * ConstRowMatrix(args.in[1]->data().data(), k, n).transpose();
    }
    if (double* gb = args.gin[1]) {
      RowMatrix(gb, k, n).noalias() += ConstRowMatrix(args.in[0]->data().data(), m, k).transpose() * g;
    }
  };
  return tape_of(a).record(OpKind::kMatMul, {a, b}, fwd, bwd);
}

Var elementwise(Unary op, Var a) {
  auto fwd = [op](std::span<const Tensor* const> in) {
    Tensor out(in[0]->shape());
    unary_forward(op, in[0]->data().data(), out.data().data(), out.numel());
    return out;
  };
  auto bwd = [op](const BackwardArgs& args) {
    double* g = args.gin[0];
    if (!g) return;
    unary_backward(op, args.in[0]->data().data(), args.out.data().data(), args.gout.data(), g, args.out.numel());
  };
  return tape_of(a).record(unary_kind(op), {a}, fwd, bwd);
}

Var elementwise(Binary op, Var a, Var b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const bool same = a.shape() == b.shape();
  auto ia = std::make_shared<std::vector<std::size_t>>();
  auto ib = std::make_shared<std::vector<std::size_t>>();
  if (!same) {
    *ia = broadcast_index(a.shape(), out_shape);
    *ib = broadcast_index(b.shape(), out_shape);
  }
  auto fwd = [op, out_shape, same, ia, ib](std::span<const Tensor* const> in) {
    Tensor out(out_shape);
    const auto x = in[0]->data();
    const auto y = in[1]->data();
    auto z = out.data();
    if (same) {
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = binary_forward(op, x[i], y[i]);
    } else {
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = binary_forward(op, x[(*ia)[i]], y[(*ib)[i]]);
    }
    return out;
  };
  auto bwd = [op, same, ia, ib](const BackwardArgs& args) {
    const auto x = args.in[0]->data();
    const auto y = args.in[1]->data();
    double* gx = args.gin[0];
    double* gy = args.gin[1];
    const std::size_t n = args.gout.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t px = same ? i : (*ia)[i];
      const std::size_t py = same ? i : (*ib)[i];
      const double g = args.gout[i];
      switch (op) {
        case Binary::kAdd:
          if (gx) gx[px] += g;
          if (gy) gy[py] += g;
          break;
        case Binary::kSub:
          if (gx) gx[px] += g;
          if (gy) gy[py] -= g;
          break;
        case Binary::kMul:
          if (gx) gx[px] += g * y[py];
          if (gy) gy[py] += g * x[px];
          break;
        case Binary::kDiv:
          if (gx) gx[px] += g / y[py];
          if (gy) gy[py] -= g * x[px] / (y[py] * y[py]);
          break;
      }
    }
  };
  return tape_of(a).record(binary_kind(op), {a, b}, fwd, bwd);
}

Var scale(Var a, double factor) {
  auto fwd = [factor](std::span<const Tensor* const> in) {
    Tensor out(in[0]->shape());
    const auto x = in[0]->data();
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = factor * x[i];
    return out;
  };
  auto bwd = [factor](const BackwardArgs& args) {
    if (double* g = args.gin[0]) {
      for (std::size_t i = 0; i < args.gout.size(); ++i) g[i] += factor * args.gout[i];
    }
  };
  return tape_of(a).record(OpKind::kScale, {a}, fwd, bwd);
}

Var add_scalar(Var a, double offset) {
  auto fwd = [offset](std::span<const Tensor* const> in) {
    Tensor out(in[0]->shape());
    const auto x = in[0]->data();
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + offset;
    return out;
  };
  auto bwd = [](const BackwardArgs& args) {
    if (double* g = args.gin[0]) {
      for (std::size_t i = 0; i < args.gout.size(); ++i) g[i] += args.gout[i];
    }
  };
  return tape_of(a).record(OpKind::kAddScalar, {a}, fwd, bwd);
}

Var clamp_min(Var a, double lo) {
  auto fwd = [lo](std::span<const Tensor* const> in) {
    Tensor out(in[0]->shape());
    const auto x = in[0]->data();
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::max(x[i], lo);
    return out;
  };
  auto bwd = [lo](const BackwardArgs& args) {
    if (double* g = args.gin[0]) {
      const auto x = args.in[0]->data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > lo) g[i] += args.gout[i];
      }
    }
  };
  return tape_of(a).record(OpKind::kClampMin, {a}, fwd, bwd);
}

Var softmax(Var x, std::size_t axis) {
  check_axis(x.shape(), axis, "softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  auto fwd = [s](std::span<const Tensor* const> in) {
    Tensor out(in[0]->shape());
    const auto v = in[0]->data();
    auto y = out.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t j = 0; j < s.inner; ++j) {
        const std::size_t base = o * s.extent * s.inner + j;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t e = 0; e < s.extent; ++e) mx = std::max(mx, v[base + e * s.inner]);
        double total = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) {
          const double ex = std::exp(v[base + e * s.inner] - mx);
          y[base + e * s.inner] = ex;
          total += ex;
        }
        for (std::size_t e = 0; e < s.extent; ++e) y[base + e * s.inner] /= total;
      }
    }
    return out;
  };
  auto bwd = [s](const BackwardArgs& args) {
    double* g = args.gin[0];
    if (!g) return;
    const auto y = args.out.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t j = 0; j < s.inner; ++j) {
        const std::size_t base = o * s.extent * s.inner + j;
        double dot = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) dot += args.gout[base + e * s.inner] * y[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t p = base + e * s.inner;
          g[p] += y[p] * (args.gout[p] - dot);
        }
      }
    }
  };
  return tape_of(x).record(OpKind::kSoftmax, {x}, fwd, bwd);
}

Var sum(Var x) {
  auto fwd = [](std::span<const Tensor* const> in) {
    double total = 0.0;
    for (double v : in[0]->data()) total += v;
    return Tensor::scalar(total);
  };
  auto bwd = [](const BackwardArgs& args) {
    if (double* g = args.gin[0]) {
      const std::size_t n = args.in[0]->numel();
      for (std::size_t i = 0; i < n; ++i) g[i] += args.gout[0];
    }
  };
  return tape_of(x).record(OpKind::kSumAll, {x}, fwd, bwd);
}

namespace {

Var reduce_axis(Var x, std::size_t axis, bool mean) {
  check_axis(x.shape(), axis, mean ? "mean_axis" : "sum_axis");
  const AxisSplit s = split_at(x.shape(), axis);
  const Shape out_shape = reduced_shape(x.shape(), axis);
  const double factor = mean ? 1.0 / static_cast<double>(s.extent) : 1.0;
  auto fwd = [s, out_shape, factor](std::span<const Tensor* const> in) {
    Tensor out(out_shape);
    const auto v = in[0]->data();
    auto y = out.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t j = 0; j < s.inner; ++j) {
        double total = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) total += v[(o * s.extent + e) * s.inner + j];
        y[o * s.inner + j] = total * factor;
      }
    }
    return out;
  };
  auto bwd = [s, factor](const BackwardArgs& args) {
    double* g = args.gin[0];
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t j = 0; j < s.inner; ++j) {
        const double go = args.gout[o * s.inner + j] * factor;
        for (std::size_t e = 0; e < s.extent; ++e) g[(o * s.extent + e) * s.inner + j] += go;
      }
    }
  };
  return tape_of(x).record(mean ? OpKind::kMeanAxis : OpKind::kSumAxis, {x}, fwd, bwd);
}

}  // namespace

Var sum_axis(Var x, std::size_t axis) { return reduce_axis(x, axis, false); }
Var mean_axis(Var x, std::size_t axis) { return reduce_axis(x, axis, true); }

Var max_axis(Var x, std::size_t axis) {
  check_axis(x.shape(), axis, "max_axis");
  const AxisSplit s = split_at(x.shape(), axis);
  const Shape out_shape = reduced_shape(x.shape(), axis);
  auto arg = std::make_shared<std::vector<std::size_t>>();
  auto fwd = [s, out_shape, arg](std::span<const Tensor* const> in) {
    Tensor out(out_shape);
    const auto v = in[0]->data();
    arg->assign(s.outer * s.inner, 0);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t j = 0; j < s.inner; ++j) {
        std::size_t best = (o * s.extent) * s.inner + j;
        for (std::size_t e = 1; e < s.extent; ++e) {
          const std::size_t p = (o * s.extent + e) * s.inner + j;
          if (v[p] > v[best]) best = p;
        }
        (*arg)[o * s.inner + j] = best;
        out[o * s.inner + j] = v[best];
      }
    }
    return out;
  };
  auto bwd = [arg](const BackwardArgs& args) {
    if (double* g = args.gin[0]) {
      for (std::size_t i = 0; i < arg->size(); ++i) g[(*arg)[i]] += args.gout[i];
    }
  };
  return tape_of(x).record(OpKind::kMaxAxis, {x}, fwd, bwd);
}

Var reshape(Var x, Shape shape) {
  if (shape_numel(shape) != x.value().numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  auto fwd = [shape](std::span<const Tensor* const> in) { return in[0]->reshaped(shape); };
  auto bwd = [](const BackwardArgs& args) {
    if (double* g = args.gin[0]) {
      for (std::size_t i = 0; i < args.gout.size(); ++i) g[i] += args.gout[i];
    }
  };
  return tape_of(x).record(OpKind::kReshape, {x}, fwd, bwd);
}

Var transpose(Var x) {
  require_rank2(x.shape(), "transpose");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  auto fwd = [r, c](std::span<const Tensor* const> in) {
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out.at(j, i) = in[0]->at(i, j);
    return out;
  };
  auto bwd = [r, c](const BackwardArgs& args) {
    if (double* g = args.gin[0]) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += args.gout[j * r + i];
    }
  };
  return tape_of(x).record(OpKind::kTranspose, {x}, fwd, bwd);
}

Var broadcast_to(Var x, Shape shape) {
  if (broadcast_shape(x.shape(), shape) != shape) {
    throw DimensionError("broadcast_to: " + to_string(x.shape()) + " does not stretch to " + to_string(shape));
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(broadcast_index(x.shape(), shape));
  auto fwd = [shape, idx](std::span<const Tensor* const> in) {
    Tensor out(shape);
    const auto v = in[0]->data();
    for (std::size_t i = 0; i < idx->size(); ++i) out[i] = v[(*idx)[i]];
    return out;
  };
  auto bwd = [idx](const BackwardArgs& args) {
    if (double* g = args.gin[0]) {
      for (std::size_t i = 0; i < idx->size(); ++i) g[(*idx)[i]] += args.gout[i];
    }
  };
  return tape_of(x).record(OpKind::kBroadcastTo, {x}, fwd, bwd);
}

Var gather_rows(const std::vector<Var>& sources, const std::vector<RowRef>& rows) {
  if (sources.empty() || rows.empty()) throw DimensionError("gather_rows: nothing to gather");
  const std::size_t cols = sources[0].shape().size() == 2 ? sources[0].shape()[1] : 0;
  for (const Var& s : sources) {
    require_rank2(s.shape(), "gather_rows");
    if (s.shape()[1] != cols) throw DimensionError("gather_rows: sources disagree on column count");
  }
  for (const RowRef& r : rows) {
    if (r.source >= sources.size() || r.row >= sources[r.source].shape()[0]) {
      throw DimensionError("gather_rows: row reference out of range");
    }
  }
  auto fwd = [rows, cols](std::span<const Tensor* const> in) {
    Tensor out({rows.size(), cols});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double* src = in[rows[i].source]->data().data() + rows[i].row * cols;
      std::copy(src, src + cols, out.data().data() + i * cols);
    }
    return out;
  };
  auto bwd = [rows, cols](const BackwardArgs& args) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double* g = args.gin[rows[i].source];
      if (!g) continue;
      g += rows[i].row * cols;
      const double* go = args.gout.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) g[j] += go[j];
    }
  };
  return tape_of(sources[0]).record(OpKind::kGatherRows, sources, fwd, bwd);
}

Var rows(Var x, std::size_t begin, std::size_t count) {
  std::vector<RowRef> refs;
  refs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) refs.push_back({0, begin + i});
  return gather_rows({x}, refs);
}

Var reverse_rows(Var x) {
  require_rank2(x.shape(), "reverse_rows");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  auto fwd = [r, c](std::span<const Tensor* const> in) {
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out.at(i, j) = in[0]->at(r - 1 - i, j);
    return out;
  };
  auto bwd = [r, c](const BackwardArgs& args) {
    if (double* g = args.gin[0]) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[(r - 1 - i) * c + j] += args.gout[i * c + j];
    }
  };
  return tape_of(x).record(OpKind::kReverseRows, {x}, fwd, bwd);
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  require_rank2(x.shape(), "slice_cols");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (count == 0 || begin + count > c) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + to_string(x.shape()));
  }
  auto fwd = [r, c, begin, count](std::span<const Tensor* const> in) {
    Tensor out({r, count});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) out.at(i, j) = in[0]->at(i, begin + j);
    return out;
  };
  auto bwd = [r, c, begin, count](const BackwardArgs& args) {
    if (double* g = args.gin[0]) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) g[i * c + begin + j] += args.gout[i * count + j];
    }
  };
  return tape_of(x).record(OpKind::kSliceCols, {x}, fwd, bwd);
}

Var rmsnorm(Var x, Var gain, double eps) {
  require_rank2(x.shape(), "rmsnorm");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (gain.value().numel() != c) throw DimensionError("rmsnorm: gain size does not match row width");
  auto fwd = [r, c, eps](std::span<const Tensor* const> in) {
    Tensor out({r, c});
    const double* px = in[0]->data().data();
    const double* pg = in[1]->data().data();
    for (std::size_t i = 0; i < r; ++i) {
      double ms = 0.0;
      for (std::size_t j = 0; j < c; ++j) ms += px[i * c + j] * px[i * c + j];
      const double inv = 1.0 / std::sqrt(ms / static_cast<double>(c) + eps);
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] = px[i * c + j] * inv * pg[j];
    }
    return out;
  };
  auto bwd = [r, c, eps](const BackwardArgs& args) {
    const double* px = args.in[0]->data().data();
    const double* pg = args.in[1]->data().data();
    double* gx = args.gin[0];
    double* gg = args.gin[1];
    for (std::size_t i = 0; i < r; ++i) {
      const double* xr = px + i * c;
      const double* go = args.gout.data() + i * c;
      double ms = 0.0;
      for (std::size_t j = 0; j < c; ++j) ms += xr[j] * xr[j];
      const double inv = 1.0 / std::sqrt(ms / static_cast<double>(c) + eps);
      if (gg) {
        for (std::size_t j = 0; j < c; ++j) gg[j] += go[j] * xr[j] * inv;
      }
      if (gx) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += go[j] * pg[j] * xr[j];
        const double k = inv * inv * inv / static_cast<double>(c) * dot;
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += inv * pg[j] * go[j] - k * xr[j];
      }
    }
  };
  return tape_of(x).record(OpKind::kRmsNorm, {x, gain}, fwd, bwd);
}

Var conv2d_depthwise(Var x, Var kernel) {
  const Shape& sx = x.shape();
  const Shape& sk = kernel.shape();
  if (sx.size() != 3 && sx.size() != 4) {
    throw DimensionError("conv2d_depthwise: input must be [Nh x Nw x c] or [T x Nh x Nw x c], got " + to_string(sx));
  }
  const std::size_t c = sx.back();
  if (sk.size() != 3 || sk[0] != 3 || sk[1] != 3) {
    throw ConfigError("conv2d_depthwise: kernel must be 3x3xc, got " + to_string(sk));
  }
  if (sk[2] != c) throw DimensionError("conv2d_depthwise: kernel channels do not match input " + to_string(sx));
  const std::size_t frames = sx.size() == 4 ? sx[0] : 1;
  const std::size_t nh = sx[sx.size() - 3], nw = sx[sx.size() - 2];

  auto fwd = [frames, nh, nw, c](std::span<const Tensor* const> in) {
    Tensor out(in[0]->shape());
    const double* px = in[0]->data().data();
    const double* pk = in[1]->data().data();
    for (std::size_t f = 0; f < frames; ++f) {
      const std::size_t base = f * nh * nw * c;
      for (std::size_t r = 0; r < nh; ++r) {
        for (std::size_t q = 0; q < nw; ++q) {
          double* o = out.data().data() + base + (r * nw + q) * c;
          for (int dr = -1; dr <= 1; ++dr) {
            const long rr = static_cast<long>(r) + dr;
            if (rr < 0 || rr >= static_cast<long>(nh)) continue;
            for (int dq = -1; dq <= 1; ++dq) {
              const long qq = static_cast<long>(q) + dq;
              if (qq < 0 || qq >= static_cast<long>(nw)) continue;
              const double* xi = px + base + (static_cast<std::size_t>(rr) * nw + static_cast<std::size_t>(qq)) * c;
              const double* kk = pk + (static_cast<std::size_t>(dr + 1) * 3 + static_cast<std::size_t>(dq + 1)) * c;
              for (std::size_t ch = 0; ch < c; ++ch) o[ch] += kk[ch] * xi[ch];
            }
          }
        }
      }
    }
    return out;
  };
  auto bwd = [frames, nh, nw, c](const BackwardArgs& args) {
    const double* px = args.in[0]->data().data();
    const double* pk = args.in[1]->data().data();
    double* gx = args.gin[0];
    double* gk = args.gin[1];
    for (std::size_t f = 0; f < frames; ++f) {
      const std::size_t base = f * nh * nw * c;
      for (std::size_t r = 0; r < nh; ++r) {
        for (std::size_t q = 0; q < nw; ++q) {
          const double* go = args.gout.data() + base + (r * nw + q) * c;
          for (int dr = -1; dr <= 1; ++dr) {
            const long rr = static_cast<long>(r) + dr;
            if (rr < 0 || rr >= static_cast<long>(nh)) continue;
            for (int dq = -1; dq <= 1; ++dq) {
              const long qq = static_cast<long>(q) + dq;
              if (qq < 0 || qq >= static_cast<long>(nw)) continue;
              const std::size_t xoff = base + (static_cast<std::size_t>(rr) * nw + static_cast<std::size_t>(qq)) * c;
              const std::size_t koff = (static_cast<std::size_t>(dr + 1) * 3 + static_cast<std::size_t>(dq + 1)) * c;
              for (std::size_t ch = 0; ch < c; ++ch) {
                if (gx) gx[xoff + ch] += pk[koff + ch] * go[ch];
                if (gk) gk[koff + ch] += px[xoff + ch] * go[ch];
              }
            }
          }
        }
      }
    }
  };
  return tape_of(x).record(OpKind::kConv2dDepthwise, {x, kernel}, fwd, bwd);
}

Var causal_conv1d(Var x, Var kernel, Var bias) {
  require_rank2(x.shape(), "causal_conv1d");
  require_rank2(kernel.shape(), "causal_conv1d kernel");
  const std::size_t s = x.shape()[0], c = x.shape()[1], k = kernel.shape()[0];
  if (kernel.shape()[1] != c || bias.value().numel() != c) {
    throw DimensionError("causal_conv1d: kernel " + to_string(kernel.shape()) + " / bias do not match input " +
                         to_string(x.shape()));
  }
  auto fwd = [s, c, k](std::span<const Tensor* const> in) {
    Tensor out({s, c});
    const double* px = in[0]->data().data();
    const double* pk = in[1]->data().data();
    const double* pb = in[2]->data().data();
    for (std::size_t i = 0; i < s; ++i) {
      double* o = out.data().data() + i * c;
      for (std::size_t ch = 0; ch < c; ++ch) o[ch] = pb[ch];
      for (std::size_t t = 0; t < k; ++t) {
        const long src = static_cast<long>(i) - static_cast<long>(k - 1) + static_cast<long>(t);
        if (src < 0) continue;
        const double* xi = px + static_cast<std::size_t>(src) * c;
        const double* kt = pk + t * c;
        for (std::size_t ch = 0; ch < c; ++ch) o[ch] += kt[ch] * xi[ch];
      }
    }
    return out;
  };
  auto bwd = [s, c, k](const BackwardArgs& args) {
    const double* px = args.in[0]->data().data();
    const double* pk = args.in[1]->data().data();
    double* gx = args.gin[0];
    double* gk = args.gin[1];
    double* gb = args.gin[2];
    for (std::size_t i = 0; i < s; ++i) {
      const double* go = args.gout.data() + i * c;
      if (gb) {
        for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += go[ch];
      }
      for (std::size_t t = 0; t < k; ++t) {
        const long src = static_cast<long>(i) - static_cast<long>(k - 1) + static_cast<long>(t);
        if (src < 0) continue;
        const std::size_t xoff = static_cast<std::size_t>(src) * c;
        for (std::size_t ch = 0; ch < c; ++ch) {
          if (gx) gx[xoff + ch] += pk[t * c + ch] * go[ch];
          if (gk) gk[t * c + ch] += px[xoff + ch] * go[ch];
        }
      }
    }
  };
  return tape_of(x).record(OpKind::kCausalConv1d, {x, kernel, bias}, fwd, bwd);
}

Var cross_entropy(Var logits, std::size_t label) {
  const std::size_t k = logits.value().numel();
  if (label >= k) {
    throw ContractError("cross_entropy: label " + std::to_string(label) + " out of range for " + std::to_string(k) +
                        " classes");
  }
  auto fwd = [label](std::span<const Tensor* const> in) {
    const auto z = in[0]->data();
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : z) mx = std::max(mx, v);
    double total = 0.0;
    for (double v : z) total += std::exp(v - mx);
    return Tensor::scalar(mx + std::log(total) - z[label]);
  };
  auto bwd = [k, label](const BackwardArgs& args) {
    double* g = args.gin[0];
    if (!g) return;
    const auto z = args.in[0]->data();
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : z) mx = std::max(mx, v);
    double total = 0.0;
    for (double v : z) total += std::exp(v - mx);
    for (std::size_t i = 0; i < k; ++i) {
      const double p = std::exp(z[i] - mx) / total;
      g[i] += args.gout[0] * (p - (i == label ? 1.0 : 0.0));
    }
  };
  return tape_of(logits).record(OpKind::kCrossEntropy, {logits}, fwd, bwd);
}

}  // namespace ssp::ops

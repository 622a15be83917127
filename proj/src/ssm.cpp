// SPDX-License-Identifier: Apache-2.0
#include "ssp/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "ssp/errors.hpp"
#include "ssp/ops.hpp"
#include "vec_math.hpp"

namespace ssp {

namespace {

constexpr double kSeriesThreshold = 1e-8;

// d/da of (exp(delta*a) - 1) / a.
double zoh_b_derivative_a(double a, double delta, double z, double em) {
  if (std::abs(z) < 1e-4) return delta * delta * (0.5 + z / 3.0 + z * z / 8.0);
  return (z * (em + 1.0) - em) / (a * a);
}

// Buffers are fully written by the forward pass, so they skip zero-filling.
struct ScanSaved {
  std::unique_ptr<double[]> h;      // [S x e x D] hidden state after each step
  std::unique_ptr<double[]> a_bar;  // [S x e x D]
  std::unique_ptr<double[]> phi;    // [S x e x D], b_bar / B
};

}  // namespace

ZohScalar zoh_scalar(double a, double b, double delta) {
  const double z = delta * a;
  const double em = std::expm1(z);
  if (std::abs(z) < kSeriesThreshold) return {1.0 + em, delta * b * (1.0 + z / 2.0)};
  return {1.0 + em, em / a * b};
}

ZohResult zoh_discretize(const Tensor& a, const Tensor& b, const Tensor& delta) {
  if (a.shape() != b.shape() || a.shape() != delta.shape()) {
    throw DimensionError("zoh_discretize: shapes " + to_string(a.shape()) + ", " + to_string(b.shape()) + ", " +
                         to_string(delta.shape()) + " must match");
  }
  ZohResult out{Tensor(a.shape()), Tensor(a.shape())};
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (!(delta[i] > 0.0)) throw DomainError("zoh_discretize: delta must be positive, got " + std::to_string(delta[i]));
    if (!(delta[i] * a[i] < 0.0)) {
      throw DomainError("zoh_discretize: delta*A must be negative, got " + std::to_string(delta[i] * a[i]));
    }
    const ZohScalar z = zoh_scalar(a[i], b[i], delta[i]);
    out.a_bar[i] = z.a_bar;
    out.b_bar[i] = z.b_bar;
  }
  return out;
}

SelectiveGates project_selective(Tape& tape, Var x, const SelectiveParams& params) {
  for (double v : x.value().data()) {
    if (!std::isfinite(v)) throw NumericError("selective scan input contains non-finite values");
  }
  const std::size_t e = params.channels();
  if (x.shape().size() != 2 || x.shape()[1] != e) {
    throw DimensionError("selective scan input " + to_string(x.shape()) + " does not have " + std::to_string(e) +
                         " channels");
  }
  SelectiveGates g;
  Var pre = ops::add(ops::matmul(x, tape.param(params.w_delta)), tape.param(params.b_delta));
  g.delta = ops::softplus(pre);
  g.b = ops::matmul(x, tape.param(params.w_b));
  g.c = ops::matmul(x, tape.param(params.w_c));
  g.a = ops::neg(ops::exp(tape.param(params.a_log)));
  return g;
}

DiscreteGates discretize_gates(const SelectiveGates& gates) {
  const Tensor& delta = gates.delta.value();
  const Tensor& a = gates.a.value();
  const Tensor& b = gates.b.value();
  const std::size_t s = delta.dim(0), e = delta.dim(1), n = a.dim(1);
  DiscreteGates out{Tensor({s, e, n}), Tensor({s, e, n})};
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t c = 0; c < e; ++c)
      for (std::size_t k = 0; k < n; ++k) {
        const ZohScalar z = zoh_scalar(a.at(c, k), b.at(i, k), delta.at(i, c));
        out.a_bar[(i * e + c) * n + k] = z.a_bar;
        out.b_bar[(i * e + c) * n + k] = z.b_bar;
      }
  return out;
}

Var scan_recurrence(Var x, Var delta, Var a, Var b, Var c) {
  const Shape& sx = x.shape();
  if (sx.size() != 2 || delta.shape() != sx || a.shape().size() != 2 || a.shape()[0] != sx[1] ||
      b.shape() != Shape{sx[0], a.shape()[1]} || c.shape() != b.shape()) {
    throw DimensionError("scan_recurrence: inconsistent shapes x" + to_string(sx) + " delta" +
                         to_string(delta.shape()) + " A" + to_string(a.shape()) + " B" + to_string(b.shape()) +
                         " C" + to_string(c.shape()));
  }
  const std::size_t s = sx[0], e = sx[1], n = a.shape()[1];
  auto saved = std::make_shared<ScanSaved>();

  auto fwd = [s, e, n, saved](std::span<const Tensor* const> in) {
    const double* px = in[0]->data().data();
    const double* pd = in[1]->data().data();
    const double* pa = in[2]->data().data();
    const double* pb = in[3]->data().data();
    const double* pc = in[4]->data().data();
    saved->h = std::make_unique_for_overwrite<double[]>(s * e * n);
    saved->a_bar = std::make_unique_for_overwrite<double[]>(s * e * n);
    saved->phi = std::make_unique_for_overwrite<double[]>(s * e * n);
    Tensor out({s, e});
    const std::size_t step = e * n;
    std::vector<double> z(step);
    const std::vector<double> h_init(n, 0.0);
    for (std::size_t i = 0; i < s; ++i) {
      const double* bi = pb + i * n;
      const double* ci = pc + i * n;
      double* abar = saved->a_bar.get() + i * step;
      double* phi = saved->phi.get() + i * step;
      for (std::size_t ch = 0; ch < e; ++ch) {
        const double dl = pd[i * e + ch];
        for (std::size_t k = 0; k < n; ++k) z[ch * n + k] = dl * pa[ch * n + k];
      }
      vecmath::blocked_map(z.data(), abar, step, [](double v) { return ::expm1(v); });
      for (std::size_t ch = 0; ch < e; ++ch) {
        const double dl = pd[i * e + ch];
        const double* ac = pa + ch * n;
        const std::size_t off = ch * n;
#pragma omp simd
        for (std::size_t k = 0; k < n; ++k) {
          const double zk = z[off + k];
          const double em = abar[off + k];
          phi[off + k] = std::abs(zk) < kSeriesThreshold ? dl * (1.0 + zk / 2.0) : em / ac[k];
          abar[off + k] = 1.0 + em;
        }
      }
      for (std::size_t ch = 0; ch < e; ++ch) {
        const double u = px[i * e + ch];
        const std::size_t base = i * step + ch * n;
        const double* hprev = i > 0 ? saved->h.get() + base - step : h_init.data();
        double* hcur = saved->h.get() + base;
        const double* ab = abar + ch * n;
        const double* ph = phi + ch * n;
        double y = 0.0;
#pragma omp simd reduction(+ : y)
        for (std::size_t k = 0; k < n; ++k) {
          const double h = ab[k] * hprev[k] + ph[k] * bi[k] * u;
          hcur[k] = h;
          y += ci[k] * h;
        }
        out[i * e + ch] = y;
      }
    }
    return out;
  };

  auto bwd = [s, e, n, saved](const BackwardArgs& args) {
    const double* px = args.in[0]->data().data();
    const double* pd = args.in[1]->data().data();
    const double* pa = args.in[2]->data().data();
    const double* pb = args.in[3]->data().data();
    const double* pc = args.in[4]->data().data();
    double* gx = args.gin[0];
    double* gd = args.gin[1];
    double* ga = args.gin[2];
    double* gb = args.gin[3];
    double* gc = args.gin[4];
    const double* gy = args.gout.data();
    std::vector<double> gh(e * n, 0.0);
    const std::vector<double> h_init(n, 0.0);
    std::vector<double> gk(n);
    for (std::size_t i = s; i-- > 0;) {
      const double* bi = pb + i * n;
      const double* ci = pc + i * n;
      for (std::size_t ch = 0; ch < e; ++ch) {
        const double u = px[i * e + ch];
        const double dl = pd[i * e + ch];
        const double gyi = gy[i * e + ch];
        const double* ac = pa + ch * n;
        const std::size_t base = (i * e + ch) * n;
        const double* hcur = saved->h.get() + base;
        const double* hprev = i > 0 ? saved->h.get() + base - e * n : h_init.data();
        const double* abar = saved->a_bar.get() + base;
        const double* phi = saved->phi.get() + base;
        double* ghc = gh.data() + ch * n;
        double gu = 0.0, gdl = 0.0;
#pragma omp simd reduction(+ : gu, gdl)
        for (std::size_t k = 0; k < n; ++k) {
          const double g = ghc[k] + gyi * ci[k];
          gk[k] = g;
          gu += g * phi[k] * bi[k];
          gdl += g * hprev[k] * ac[k] * abar[k] + g * u * bi[k] * abar[k];
          ghc[k] = g * abar[k];
        }
        if (gc) {
          for (std::size_t k = 0; k < n; ++k) gc[i * n + k] += gyi * hcur[k];
        }
        if (gb) {
          for (std::size_t k = 0; k < n; ++k) gb[i * n + k] += gk[k] * u * phi[k];
        }
        if (ga) {
          for (std::size_t k = 0; k < n; ++k) {
            const double z = dl * ac[k];
            ga[ch * n + k] += gk[k] * hprev[k] * dl * abar[k] +
                              gk[k] * u * bi[k] * zoh_b_derivative_a(ac[k], dl, z, abar[k] - 1.0);
          }
        }
        if (gx) gx[i * e + ch] += gu;
        if (gd) gd[i * e + ch] += gdl;
      }
    }
  };
  return x.tape->record(OpKind::kSelectiveScan, {x, delta, a, b, c}, fwd, bwd);
}

Var selective_scan(Tape& tape, Var x, const SelectiveParams& params, Direction direction, ScanCapture* capture) {
  const bool reversed = direction == Direction::kBackward;
  Var seq = reversed ? ops::reverse_rows(x) : x;
  SelectiveGates g = project_selective(tape, seq, params);
  Var y = scan_recurrence(seq, g.delta, g.a, g.b, g.c);

  if (capture) {
    const Tensor& delta = g.delta.value();
    const Tensor& a = g.a.value();
    const Tensor& b = g.b.value();
    const std::size_t s = delta.dim(0), e = delta.dim(1), n = a.dim(1);
    capture->delta = Tensor({s, e});
    capture->a = a;
    capture->update_gate_norm.assign(s, 0.0);
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t pos = reversed ? s - 1 - i : i;
      double sq = 0.0;
      for (std::size_t c = 0; c < e; ++c) {
        capture->delta.at(pos, c) = delta.at(i, c);
        for (std::size_t k = 0; k < n; ++k) {
          const double bb = zoh_scalar(a.at(c, k), b.at(i, k), delta.at(i, c)).b_bar;
          sq += bb * bb;
        }
      }
      capture->update_gate_norm[pos] = std::sqrt(sq);
    }
  }
  return reversed ? ops::reverse_rows(y) : y;
}

namespace {

Var direction_branch(Tape& tape, Var main, const SelectiveParams& p, Direction direction, ScanCapture* capture) {
  const bool reversed = direction == Direction::kBackward;
  Var seq = reversed ? ops::reverse_rows(main) : main;
  Var conv = ops::silu(ops::causal_conv1d(seq, tape.param(p.conv_kernel), tape.param(p.conv_bias)));
  // The branch input is already in scan order, so scan it forward and undo
  // the reversal afterwards; captures are mapped back to original order.
  Var y = selective_scan(tape, conv, p, Direction::kForward, capture);
  if (reversed && capture) {
    const std::size_t s = capture->delta.dim(0), e = capture->delta.dim(1);
    Tensor delta({s, e});
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t c = 0; c < e; ++c) delta.at(i, c) = capture->delta.at(s - 1 - i, c);
    capture->delta = std::move(delta);
    std::reverse(capture->update_gate_norm.begin(), capture->update_gate_norm.end());
  }
  return reversed ? ops::reverse_rows(y) : y;
}

}  // namespace

Var mamba_block(Tape& tape, Var x, const MambaLayerParams& params, BlockCapture* capture) {
  const std::size_t e = params.w_out.dim(0);
  Var u = ops::rmsnorm(x, tape.param(params.norm_gain));
  Var proj = ops::matmul(u, tape.param(params.w_in));
  Var main = ops::slice_cols(proj, 0, e);
  Var gate = ops::slice_cols(proj, e, e);
  Var yf = direction_branch(tape, main, params.fwd, Direction::kForward, capture ? &capture->fwd : nullptr);
  Var yb = direction_branch(tape, main, params.bwd, Direction::kBackward, capture ? &capture->bwd : nullptr);
  Var mixed = ops::mul(ops::scale(ops::add(yf, yb), 0.5), ops::silu(gate));
  Var out = ops::matmul(mixed, tape.param(params.w_out));
  return ops::add(x, out);
}

namespace {

SelectiveParams init_direction(std::size_t e, std::size_t state, std::mt19937_64& rng) {
  SelectiveParams p;
  const double conv_bound = 1.0 / std::sqrt(static_cast<double>(kCausalConvWidth));
  p.conv_kernel = uniform_tensor({kCausalConvWidth, e}, conv_bound, rng);
  p.conv_bias = uniform_tensor({e}, conv_bound, rng);
  p.a_log = Tensor({e, state});
  for (std::size_t c = 0; c < e; ++c)
    for (std::size_t k = 0; k < state; ++k) p.a_log.at(c, k) = std::log(static_cast<double>(k + 1));
  p.w_delta = normal_tensor({e, e}, 0.1 / std::sqrt(static_cast<double>(e)), rng);
  p.b_delta = Tensor({e});
  std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
  for (double& v : p.b_delta.data()) {
    const double dt = std::exp(log_dt(rng));
    v = dt + std::log(-std::expm1(-dt));  // inverse softplus
  }
  p.w_b = normal_tensor({e, state}, 1.0 / std::sqrt(static_cast<double>(e)), rng);
  p.w_c = normal_tensor({e, state}, 1.0 / std::sqrt(static_cast<double>(e)), rng);
  return p;
}

}  // namespace

MambaLayerParams init_mamba_layer(std::size_t d, std::size_t e, std::size_t state, std::mt19937_64& rng) {
  MambaLayerParams p;
  p.norm_gain = Tensor({d}, 1.0);
  p.w_in = normal_tensor({d, 2 * e}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  p.fwd = init_direction(e, state, rng);
  p.bwd = init_direction(e, state, rng);
  p.w_out = normal_tensor({e, d}, 1.0 / std::sqrt(static_cast<double>(e)), rng);
  return p;
}

}  // namespace ssp

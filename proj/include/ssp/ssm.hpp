// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "ssp/tape.hpp"
#include "ssp/tensor.hpp"

namespace ssp {

enum class Direction { kForward, kBackward };

/// Parameters of one scan direction of a bidirectional selective SSM.
/// e = scan channel count, D = state size per channel, k = conv width.
struct SelectiveParams {
  Tensor conv_kernel;  // [k x e]
  Tensor conv_bias;    // [e]
  Tensor a_log;        // [e x D], A = -exp(a_log)
  Tensor w_delta;      // [e x e]
  Tensor b_delta;      // [e]
  Tensor w_b;          // [e x D]
  Tensor w_c;          // [e x D]

  std::size_t channels() const { return a_log.dim(0); }
  std::size_t state_size() const { return a_log.dim(1); }
};

/// One pre-norm residual Mamba layer with independent forward and backward
/// scan parameters.
struct MambaLayerParams {
  Tensor norm_gain;  // [d]
  Tensor w_in;       // [d x 2e], columns split into (main, gate)
  SelectiveParams fwd;
  SelectiveParams bwd;
  Tensor w_out;  // [e x d]
};

inline constexpr std::size_t kCausalConvWidth = 4;

struct ZohScalar {
  double a_bar;
  double b_bar;
};

/// Elementwise zero-order hold for diagonal A without domain checks:
/// a_bar = exp(delta*a), b_bar = (exp(delta*a) - 1) / a * b, switching to
/// delta*b*(1 + delta*a/2) when |delta*a| < 1e-8.
ZohScalar zoh_scalar(double a, double b, double delta);

struct ZohResult {
  Tensor a_bar;
  Tensor b_bar;
};

/// Checked elementwise zero-order hold over equally shaped tensors.
/// Throws DomainError if any delta <= 0 or any delta*a >= 0.
ZohResult zoh_discretize(const Tensor& a, const Tensor& b, const Tensor& delta);

/// Per-token selective parameters for an input sequence x [S x e].
struct SelectiveGates {
  Var delta;  // [S x e], softplus(x W_delta + b_delta)
  Var b;      // [S x D]
  Var c;      // [S x D]
  Var a;      // [e x D], realized A (strictly negative)
};

/// Projects x to (delta, B, C) and realizes A. Throws NumericError on
/// non-finite input.
SelectiveGates project_selective(Tape& tape, Var x, const SelectiveParams& params);

/// Discretized gates per token, laid out [S x e x D].
struct DiscreteGates {
  Tensor a_bar;
  Tensor b_bar;
};

DiscreteGates discretize_gates(const SelectiveGates& gates);

/// The literal recurrence h_i = a_bar_i * h_{i-1} + b_bar_i * x_i,
/// y_i = sum_n C_i[n] h_i[:, n], with h_0 = 0, as one differentiable op.
Var scan_recurrence(Var x, Var delta, Var a, Var b, Var c);

/// Values recorded from one scan direction, in original sequence order.
struct ScanCapture {
  Tensor delta;                           // [S x e]
  Tensor a;                               // [e x D]
  std::vector<double> update_gate_norm;   // per position, Frobenius norm of b_bar
};

/// Selective scan over x [S x e]. kBackward processes the reversed sequence
/// and reverses its output.
Var selective_scan(Tape& tape, Var x, const SelectiveParams& params, Direction direction,
                   ScanCapture* capture = nullptr);

struct BlockCapture {
  ScanCapture fwd;
  ScanCapture bwd;
};

/// Residual block: u = rmsnorm(x); (main, gate) = split(u W_in); per
/// direction main -> causal conv -> silu -> selective scan; the two scans are
/// averaged, gated by silu(gate), projected by W_out and added to x.
Var mamba_block(Tape& tape, Var x, const MambaLayerParams& params, BlockCapture* capture = nullptr);

/// Random initialization: A = -(1..D) per channel, delta bias set so that
/// softplus(b_delta) is log-uniform in [1e-3, 1e-1].
MambaLayerParams init_mamba_layer(std::size_t d, std::size_t e, std::size_t state, std::mt19937_64& rng);

}  // namespace ssp

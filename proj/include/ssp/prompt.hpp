// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ssp/sequence.hpp"
#include "ssp/tape.hpp"
#include "ssp/tensor.hpp"

namespace ssp {

/// Intra-frame gathering: low-rank conv prompts, spatial-variance branch and
/// entropy weighting. Shared by all layers.
struct IfgParams {
  Tensor down1;  // [d x ds]
  Tensor conv1;  // [3 x 3 x ds]
  Tensor up1;    // [ds x d]
  Tensor conv2;  // [3 x 3 x ds]
  Tensor up2;    // [ds x d]
  Tensor alpha;  // [1]
  double epsilon = 1e-8;
};

/// Inter-frame spreading: low-rank single-head attention across frames.
struct IfsParams {
  Tensor down2;  // [d x dt]
  Tensor wq;     // [dt x dt]
  Tensor wk;
  Tensor wv;
  Tensor wo;
  Tensor up3;   // [dt x d]
  Tensor beta;  // [1]
};

/// Lower clamp on the per-frame maximum entropy.
inline constexpr double kEntropyMaxFloor = 1e-8;

struct EntropyResult {
  Var w;           // [T x d], alpha * softmax over frames, broadcast over channels
  Var token_e;     // [T x N x 1], 1 - H / max H within the frame
  Var frame_mean;  // [T x 1]
};

/// Entropy weights of intra-frame prompts p_s [T x N x d].
EntropyResult entropy_weights(Var p_s, Var alpha, double epsilon);

struct IfgResult {
  Var p_s;  // [(T*N) x d], frame-major
  Var w;    // [T x d]
  Var v;    // [T x d]
  Var token_e;
  Var frame_mean;
};

/// Frame tokens are [(T*N) x d], frame-major, raster order within a frame.
/// Throws ConfigError if N is not a perfect square.
IfgResult ifg_forward(Tape& tape, Var frame_tokens, std::size_t frames, const IfgParams& params);

enum class SamplingStrategy { kLastForward, kMiddle, kBidirection, kBiIndependent };

/// Throws ConfigError on an unknown name.
SamplingStrategy parse_strategy(std::string_view name);
std::string to_string(SamplingStrategy strategy);

/// Patch indices sampled from each frame: one for last_forward/middle, the
/// pair (N-1, 0) for the directional variants.
std::vector<std::size_t> sampled_patches(SamplingStrategy strategy, std::size_t patches);

/// Rows of each frame's token at `patch`, as [T x d].
Var sample_frame_token(const TokenSequence& seq, std::size_t patch);

/// p_t = beta * up3(attn(down2(s * w))) * v. `s` holds T rows, or 2T rows
/// (two samples per frame, attended jointly, averaged back per frame).
/// Throws ContractError when T = 0.
Var ifs_forward(Tape& tape, Var s, Var w, Var v, const IfsParams& params);

/// x + p_s; throws DimensionError unless the shapes match exactly.
Var overlay_intra(Var x, Var p_s);

/// Adds prompt slots after each frame, or replaces them if present.
/// Throws ContractError if p_t does not have one row per frame.
TokenSequence insert_inter(const TokenSequence& seq, Var p_t);

/// up1/up2 zero; up3 small random so the inter-frame path can learn.
IfgParams init_ifg(std::size_t d, std::size_t ds, std::mt19937_64& rng);
IfsParams init_ifs(std::size_t d, std::size_t dt, double beta, std::mt19937_64& rng);

}  // namespace ssp

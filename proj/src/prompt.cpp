// SPDX-License-Identifier: Apache-2.0
#include "ssp/prompt.hpp"

#include <cmath>

#include "ssp/errors.hpp"
#include "ssp/ops.hpp"

namespace ssp {

namespace {

std::size_t grid_side(std::size_t patches) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(patches))));
  if (side * side != patches) {
    throw ConfigError("patch count " + std::to_string(patches) + " is not a perfect square");
  }
  return side;
}

// Rows of `x` repeated `times` times in order.
Var tile_rows(Var x, std::size_t times) {
  if (times == 1) return x;
  const std::size_t n = x.shape()[0];
  std::vector<ops::RowRef> refs;
  for (std::size_t r = 0; r < times; ++r)
    for (std::size_t i = 0; i < n; ++i) refs.push_back({0, i});
  return ops::gather_rows({x}, refs);
}

}  // namespace

EntropyResult entropy_weights(Var p_s, Var alpha, double epsilon) {
  if (!(epsilon > 0)) throw ContractError("entropy_weights: epsilon must be positive");
  if (p_s.shape().size() != 3) {
    throw DimensionError("entropy_weights: expected [T x N x d], got " + to_string(p_s.shape()));
  }
  const std::size_t frames = p_s.shape()[0];
  const std::size_t d = p_s.shape()[2];

  Var prob = ops::softmax(p_s, 2);
  Var h = ops::neg(ops::sum_axis(ops::mul(prob, ops::log(ops::add_scalar(prob, epsilon))), 2));  // [T,N,1]
  Var h_max = ops::clamp_min(ops::max_axis(h, 1), kEntropyMaxFloor);                           // [T,1,1]
  Var e = ops::add_scalar(ops::neg(ops::div(h, h_max)), 1.0);
  Var e_mean = ops::reshape(ops::mean_axis(e, 1), {frames, 1});
  Var share = ops::softmax(e_mean, 0);
  Var w = ops::broadcast_to(ops::mul(share, alpha), {frames, d});
  return {w, e, e_mean};
}

IfgResult ifg_forward(Tape& tape, Var frame_tokens, std::size_t frames, const IfgParams& params) {
  if (frames == 0 || frame_tokens.shape().size() != 2 || frame_tokens.shape()[0] % frames != 0) {
    throw DimensionError("ifg_forward: frame tokens " + to_string(frame_tokens.shape()) + " do not split into " +
                         std::to_string(frames) + " frames");
  }
  const std::size_t rows = frame_tokens.shape()[0];
  const std::size_t patches = rows / frames;
  const std::size_t d = frame_tokens.shape()[1];
  const std::size_t side = grid_side(patches);
  const std::size_t ds = params.down1.dim(1);

  Var low = ops::matmul(frame_tokens, tape.param(params.down1));
  Var grid = ops::conv2d_depthwise(ops::reshape(low, {frames, side, side, ds}), tape.param(params.conv1));
  Var gathered = ops::reshape(grid, {rows, ds});
  Var p_s = ops::matmul(gathered, tape.param(params.up1));

  Var spread = ops::conv2d_depthwise(grid, tape.param(params.conv2));
  Var var_map = ops::matmul(ops::reshape(spread, {rows, ds}), tape.param(params.up2));
  Var v = ops::reshape(ops::mean_axis(ops::reshape(var_map, {frames, patches, d}), 1), {frames, d});

  EntropyResult ent = entropy_weights(ops::reshape(p_s, {frames, patches, d}), tape.param(params.alpha), params.epsilon);
  return {p_s, ent.w, v, ent.token_e, ent.frame_mean};
}

SamplingStrategy parse_strategy(std::string_view name) {
  if (name == "last_forward") return SamplingStrategy::kLastForward;
  if (name == "middle") return SamplingStrategy::kMiddle;
  if (name == "bidirection") return SamplingStrategy::kBidirection;
  if (name == "bi_independent") return SamplingStrategy::kBiIndependent;
  throw ConfigError("unknown sampling strategy '" + std::string(name) + "'");
}

std::string to_string(SamplingStrategy strategy) {
  switch (strategy) {
    case SamplingStrategy::kLastForward: return "last_forward";
    case SamplingStrategy::kMiddle: return "middle";
    case SamplingStrategy::kBidirection: return "bidirection";
    case SamplingStrategy::kBiIndependent: return "bi_independent";
  }
  return "?";
}

std::vector<std::size_t> sampled_patches(SamplingStrategy strategy, std::size_t patches) {
  if (patches == 0) throw ContractError("sampled_patches: frame has no patches");
  switch (strategy) {
    case SamplingStrategy::kLastForward: return {patches - 1};
    case SamplingStrategy::kMiddle: return {patches / 2};
    case SamplingStrategy::kBidirection:
    case SamplingStrategy::kBiIndependent: return {patches - 1, 0};
  }
  return {};
}

Var sample_frame_token(const TokenSequence& seq, std::size_t patch) {
  std::vector<ops::RowRef> refs;
  refs.reserve(seq.frames);
  for (std::size_t f = 0; f < seq.frames; ++f) refs.push_back({0, seq.frame_position(f, patch)});
  return ops::gather_rows({seq.tokens}, refs);
}

Var ifs_forward(Tape& tape, Var s, Var w, Var v, const IfsParams& params) {
  if (w.shape().size() != 2 || w.shape()[0] == 0) throw ContractError("ifs_forward: no frames");
  const std::size_t frames = w.shape()[0];
  if (s.shape().size() != 2 || s.shape()[0] == 0) throw ContractError("ifs_forward: no sampled tokens");
  const std::size_t rows = s.shape()[0];
  if (rows != frames && rows != 2 * frames) {
    throw DimensionError("ifs_forward: " + std::to_string(rows) + " sampled rows for " + std::to_string(frames) +
                         " frames");
  }
  if (v.shape() != w.shape()) {
    throw DimensionError("ifs_forward: gate shapes " + to_string(w.shape()) + " and " + to_string(v.shape()));
  }
  const std::size_t dt = params.down2.dim(1);

  Var g = ops::mul(s, tile_rows(w, rows / frames));
  Var z = ops::matmul(g, tape.param(params.down2));
  Var q = ops::matmul(z, tape.param(params.wq));
  Var k = ops::matmul(z, tape.param(params.wk));
  Var val = ops::matmul(z, tape.param(params.wv));
  Var scores = ops::scale(ops::matmul(q, ops::transpose(k)), 1.0 / std::sqrt(static_cast<double>(dt)));
  Var mixed = ops::matmul(ops::matmul(ops::softmax(scores, 1), val), tape.param(params.wo));
  Var up = ops::matmul(mixed, tape.param(params.up3));
  if (rows == 2 * frames) {
    up = ops::scale(ops::add(ops::rows(up, 0, frames), ops::rows(up, frames, frames)), 0.5);
  }
  return ops::mul(ops::mul(up, tape.param(params.beta)), v);
}

Var overlay_intra(Var x, Var p_s) {
  if (x.shape() != p_s.shape()) {
    throw DimensionError("overlay_intra: " + to_string(x.shape()) + " vs " + to_string(p_s.shape()));
  }
  return ops::add(x, p_s);
}

TokenSequence insert_inter(const TokenSequence& seq, Var p_t) {
  if (p_t.shape().size() != 2 || p_t.shape()[0] != seq.frames) {
    throw ContractError("insert_inter: prompt rows " + to_string(p_t.shape()) + " for " +
                        std::to_string(seq.frames) + " frames");
  }
  return rebuild_sequence(seq, std::nullopt, p_t);
}

IfgParams init_ifg(std::size_t d, std::size_t ds, std::mt19937_64& rng) {
  IfgParams p;
  p.down1 = normal_tensor({d, ds}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  p.conv1 = uniform_tensor({3, 3, ds}, 1.0 / 3.0, rng);
  p.up1 = Tensor({ds, d});
  p.conv2 = uniform_tensor({3, 3, ds}, 1.0 / 3.0, rng);
  p.up2 = Tensor({ds, d});
  p.alpha = Tensor({1}, 1.0);
  return p;
}

IfsParams init_ifs(std::size_t d, std::size_t dt, double beta, std::mt19937_64& rng) {
  const double attn_std = 1.0 / std::sqrt(static_cast<double>(dt));
  IfsParams p;
  p.down2 = normal_tensor({d, dt}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  p.wq = normal_tensor({dt, dt}, attn_std, rng);
  p.wk = normal_tensor({dt, dt}, attn_std, rng);
  p.wv = normal_tensor({dt, dt}, attn_std, rng);
  p.wo = normal_tensor({dt, dt}, attn_std, rng);
  p.up3 = normal_tensor({dt, d}, 0.02, rng);
  p.beta = Tensor({1}, beta);
  return p;
}

}  // namespace ssp

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ssp/prompt.hpp"
#include "ssp/sequence.hpp"
#include "ssp/ssm.hpp"
#include "ssp/tape.hpp"
#include "ssp/tensor.hpp"

namespace ssp {

struct ModelConfig {
  std::size_t T = 8;
  std::size_t C = 1;
  std::size_t H = 16;
  std::size_t W = 16;
  std::size_t patch_h = 4;
  std::size_t patch_w = 4;
  std::size_t d = 32;
  std::size_t D = 8;
  std::size_t L = 4;
  std::size_t d_s = 16;
  std::size_t d_t = 8;
  std::size_t n_ifs = 3;
  SamplingStrategy strategy = SamplingStrategy::kLastForward;
  std::size_t n_classes = 6;
  std::size_t expand = 2;  // scan channels = expand * d

  std::size_t patches() const { return (H / patch_h) * (W / patch_w); }
  std::size_t channels() const { return expand * d; }
  std::size_t patch_dim() const { return C * patch_h * patch_w; }
  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
};

enum class ParamGroup { kBackbone, kIntraPrompt, kInterPrompt, kHead };

std::string_view to_string(ParamGroup group);

struct ModelParams {
  Tensor embed_w;  // [C*h*w x d]
  Tensor embed_b;  // [d]
  Tensor cls;      // [1 x d]
  std::vector<MambaLayerParams> layers;
  Tensor norm_f;  // [d]
  IfgParams ifg;
  std::vector<IfsParams> ifs;      // one per boundary 1..n_ifs
  std::vector<IfsParams> ifs_aux;  // second instance per boundary, bi_independent only
  Tensor head_w;  // [d x K]
  Tensor head_b;  // [K]
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
  ParamGroup group;
};

/// Every parameter tensor with a stable name, in a fixed order.
std::vector<NamedTensor> named_tensors(ModelParams& params);

/// Seeded initialization. beta_init sets the inter-frame prompt scale.
ModelParams init_model(const ModelConfig& config, std::uint64_t seed, double beta_init = 0.1);

enum class FreezePolicy { kSspPeft, kFull, kHeadOnly };

FreezePolicy parse_policy(std::string_view name);
std::string to_string(FreezePolicy policy);

enum class SlotMode { kReuse, kCarry };

SlotMode parse_slot_mode(std::string_view name);
std::string to_string(SlotMode mode);

/// Ablation and prompt-path switches for one forward pass.
struct ForwardOptions {
  bool use_ifg = true;
  bool use_ifs = true;
  bool use_entropy_gate = true;
  bool use_variance_gate = true;
  SlotMode slot_mode = SlotMode::kReuse;
};

/// Trainability per named tensor, in named_tensors() order. Modules that
/// the options switch off are frozen.
std::vector<bool> freeze_mask(ModelParams& params, FreezePolicy policy, const ForwardOptions& options = {});
/// Applies freeze_mask to the tensors' requires_grad flags.
void apply_freeze(ModelParams& params, FreezePolicy policy, const ForwardOptions& options = {});

struct ParamCounts {
  std::size_t total = 0;
  std::size_t trainable = 0;
  double trainable_fraction() const { return total ? static_cast<double>(trainable) / static_cast<double>(total) : 0; }
};

ParamCounts count_params(ModelParams& params);

/// Prompt values at one layer input (and the boundary after it).
struct PromptState {
  Tensor p_s;         // [T x N x d]
  Tensor w;           // [T x d]
  Tensor v;           // [T x d]
  Tensor frame_mean;  // [T x 1] mean entropy score per frame
  Tensor p_t;         // [T x d] generated after this layer; empty if none
};

struct LayerTrace {
  std::vector<PositionTag> positions;  // layout of this layer's input
  BlockCapture block;
  std::optional<PromptState> prompts;
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
};

/// Non-overlapping patches, raster order, projected to d: [(T*N) x d].
Var patch_embed(Tape& tape, const Tensor& video, const ModelConfig& config, const ModelParams& params);

/// Full classifier; returns logits [K]. video is [T x C x H x W].
Var forward(Tape& tape, const Tensor& video, const ModelConfig& config, const ModelParams& params,
            const ForwardOptions& options = {}, ForwardTrace* trace = nullptr);

/// Options that reduce the model to the promptless backbone.
inline ForwardOptions backbone_only() {
  ForwardOptions o;
  o.use_ifg = false;
  o.use_ifs = false;
  return o;
}

}  // namespace ssp

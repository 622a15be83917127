// SPDX-License-Identifier: Apache-2.0
#include "ssp/model.hpp"

#include <cmath>
#include <random>

#include "ssp/errors.hpp"
#include "ssp/ops.hpp"

namespace ssp {

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(T > 0 && C > 0 && H > 0 && W > 0, "T, C, H and W must be positive");
  require(patch_h > 0 && patch_w > 0, "patch_h and patch_w must be positive");
  require(H % patch_h == 0, "H=" + std::to_string(H) + " is not divisible by patch_h=" + std::to_string(patch_h));
  require(W % patch_w == 0, "W=" + std::to_string(W) + " is not divisible by patch_w=" + std::to_string(patch_w));
  const std::size_t n = patches();
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  require(side * side == n, "patch count N=" + std::to_string(n) + " is not a perfect square");
  require(d > 0 && D > 0 && expand > 0, "d, D and expand must be positive");
  require(L >= 2, "L must be at least 2");
  require(d_s > 0 && d_s < d, "d_s must satisfy 0 < d_s < d");
  require(d_t > 0 && d_t < d, "d_t must satisfy 0 < d_t < d");
  require(n_ifs >= 1 && n_ifs <= L - 1, "n_ifs must satisfy 1 <= n_ifs <= L-1");
  require(n_classes >= 2, "n_classes must be at least 2");
}

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::kBackbone: return "backbone";
    case ParamGroup::kIntraPrompt: return "intra_prompt";
    case ParamGroup::kInterPrompt: return "inter_prompt";
    case ParamGroup::kHead: return "head";
  }
  return "?";
}

namespace {

void add_selective(std::vector<NamedTensor>& out, const std::string& prefix, SelectiveParams& p) {
  out.push_back({prefix + ".conv_kernel", &p.conv_kernel, ParamGroup::kBackbone});
  out.push_back({prefix + ".conv_bias", &p.conv_bias, ParamGroup::kBackbone});
  out.push_back({prefix + ".a_log", &p.a_log, ParamGroup::kBackbone});
  out.push_back({prefix + ".w_delta", &p.w_delta, ParamGroup::kBackbone});
  out.push_back({prefix + ".b_delta", &p.b_delta, ParamGroup::kBackbone});
  out.push_back({prefix + ".w_b", &p.w_b, ParamGroup::kBackbone});
  out.push_back({prefix + ".w_c", &p.w_c, ParamGroup::kBackbone});
}

void add_ifs(std::vector<NamedTensor>& out, const std::string& prefix, IfsParams& p) {
  const ParamGroup g = ParamGroup::kInterPrompt;
  out.push_back({prefix + ".down2", &p.down2, g});
  out.push_back({prefix + ".wq", &p.wq, g});
  out.push_back({prefix + ".wk", &p.wk, g});
  out.push_back({prefix + ".wv", &p.wv, g});
  out.push_back({prefix + ".wo", &p.wo, g});
  out.push_back({prefix + ".up3", &p.up3, g});
  out.push_back({prefix + ".beta", &p.beta, g});
}

}  // namespace

std::vector<NamedTensor> named_tensors(ModelParams& params) {
  std::vector<NamedTensor> out;
  out.push_back({"embed.weight", &params.embed_w, ParamGroup::kBackbone});
  out.push_back({"embed.bias", &params.embed_b, ParamGroup::kBackbone});
  out.push_back({"cls", &params.cls, ParamGroup::kBackbone});
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const std::string p = "layers." + std::to_string(i);
    MambaLayerParams& layer = params.layers[i];
    out.push_back({p + ".norm", &layer.norm_gain, ParamGroup::kBackbone});
    out.push_back({p + ".in_proj", &layer.w_in, ParamGroup::kBackbone});
    add_selective(out, p + ".fwd", layer.fwd);
    add_selective(out, p + ".bwd", layer.bwd);
    out.push_back({p + ".out_proj", &layer.w_out, ParamGroup::kBackbone});
  }
  out.push_back({"norm_f", &params.norm_f, ParamGroup::kBackbone});
  const ParamGroup g = ParamGroup::kIntraPrompt;
  out.push_back({"ifg.down1", &params.ifg.down1, g});
  out.push_back({"ifg.conv1", &params.ifg.conv1, g});
  out.push_back({"ifg.up1", &params.ifg.up1, g});
  out.push_back({"ifg.conv2", &params.ifg.conv2, g});
  out.push_back({"ifg.up2", &params.ifg.up2, g});
  out.push_back({"ifg.alpha", &params.ifg.alpha, g});
  for (std::size_t j = 0; j < params.ifs.size(); ++j) add_ifs(out, "ifs." + std::to_string(j), params.ifs[j]);
  for (std::size_t j = 0; j < params.ifs_aux.size(); ++j)
    add_ifs(out, "ifs_aux." + std::to_string(j), params.ifs_aux[j]);
  out.push_back({"head.weight", &params.head_w, ParamGroup::kHead});
  out.push_back({"head.bias", &params.head_b, ParamGroup::kHead});
  return out;
}

ModelParams init_model(const ModelConfig& config, std::uint64_t seed, double beta_init) {
  config.validate();
  // Backbone and prompt modules draw from separate streams so changing the
  // prompt configuration leaves the backbone unchanged.
  std::mt19937_64 backbone_rng(seed);
  std::mt19937_64 prompt_rng(seed ^ 0x9e3779b97f4a7c15ULL);

  ModelParams p;
  const std::size_t d = config.d;
  p.embed_w = normal_tensor({config.patch_dim(), d}, 1.0 / std::sqrt(static_cast<double>(config.patch_dim())),
                            backbone_rng);
  p.embed_b = normal_tensor({d}, 0.02, backbone_rng);
  p.cls = normal_tensor({1, d}, 0.02, backbone_rng);
  for (std::size_t i = 0; i < config.L; ++i)
    p.layers.push_back(init_mamba_layer(d, config.channels(), config.D, backbone_rng));
  p.norm_f = Tensor({d}, 1.0);

  p.ifg = init_ifg(d, config.d_s, prompt_rng);
  for (std::size_t j = 0; j < config.n_ifs; ++j) p.ifs.push_back(init_ifs(d, config.d_t, beta_init, prompt_rng));
  if (config.strategy == SamplingStrategy::kBiIndependent) {
    for (std::size_t j = 0; j < config.n_ifs; ++j)
      p.ifs_aux.push_back(init_ifs(d, config.d_t, beta_init, prompt_rng));
  }
  std::mt19937_64 head_rng(seed ^ 0x5851f42d4c957f2dULL);
  p.head_w = normal_tensor({d, config.n_classes}, 1.0 / std::sqrt(static_cast<double>(d)), head_rng);
  p.head_b = Tensor({config.n_classes});
  return p;
}

FreezePolicy parse_policy(std::string_view name) {
  if (name == "ssp_peft") return FreezePolicy::kSspPeft;
  if (name == "full") return FreezePolicy::kFull;
  if (name == "head_only") return FreezePolicy::kHeadOnly;
  throw ConfigError("unknown freeze policy '" + std::string(name) + "'");
}

std::string to_string(FreezePolicy policy) {
  switch (policy) {
    case FreezePolicy::kSspPeft: return "ssp_peft";
    case FreezePolicy::kFull: return "full";
    case FreezePolicy::kHeadOnly: return "head_only";
  }
  return "?";
}

SlotMode parse_slot_mode(std::string_view name) {
  if (name == "reuse") return SlotMode::kReuse;
  if (name == "carry") return SlotMode::kCarry;
  throw ConfigError("unknown slot mode '" + std::string(name) + "'");
}

std::string to_string(SlotMode mode) { return mode == SlotMode::kReuse ? "reuse" : "carry"; }

std::vector<bool> freeze_mask(ModelParams& params, FreezePolicy policy, const ForwardOptions& options) {
  std::vector<bool> mask;
  for (const NamedTensor& nt : named_tensors(params)) {
    bool trainable = false;
    switch (nt.group) {
      case ParamGroup::kBackbone: trainable = policy == FreezePolicy::kFull; break;
      case ParamGroup::kHead: trainable = true; break;
      case ParamGroup::kIntraPrompt: trainable = policy != FreezePolicy::kHeadOnly && options.use_ifg; break;
      case ParamGroup::kInterPrompt: trainable = policy != FreezePolicy::kHeadOnly && options.use_ifs; break;
    }
    mask.push_back(trainable);
  }
  return mask;
}

void apply_freeze(ModelParams& params, FreezePolicy policy, const ForwardOptions& options) {
  const std::vector<bool> mask = freeze_mask(params, policy, options);
  const auto named = named_tensors(params);
  for (std::size_t i = 0; i < named.size(); ++i) named[i].tensor->set_requires_grad(mask[i]);
}

ParamCounts count_params(ModelParams& params) {
  ParamCounts c;
  for (const NamedTensor& nt : named_tensors(params)) {
    c.total += nt.tensor->numel();
    if (nt.tensor->requires_grad()) c.trainable += nt.tensor->numel();
  }
  return c;
}

Var patch_embed(Tape& tape, const Tensor& video, const ModelConfig& config, const ModelParams& params) {
  const Shape expected{config.T, config.C, config.H, config.W};
  if (video.shape() != expected) {
    throw DimensionError("patch_embed: video " + to_string(video.shape()) + ", expected " + to_string(expected));
  }
  if (config.H % config.patch_h != 0 || config.W % config.patch_w != 0) {
    throw ConfigError("patch_embed: frame size is not divisible by the patch size");
  }
  const std::size_t ph = config.patch_h, pw = config.patch_w;
  const std::size_t gh = config.H / ph, gw = config.W / pw;
  const std::size_t pd = config.patch_dim();
  const std::size_t n = gh * gw;
  Tensor flat({config.T * n, pd});
  const auto src = video.data();
  for (std::size_t t = 0; t < config.T; ++t)
    for (std::size_t r = 0; r < gh; ++r)
      for (std::size_t q = 0; q < gw; ++q) {
        double* row = &flat.at(t * n + r * gw + q, 0);
        std::size_t k = 0;
        for (std::size_t c = 0; c < config.C; ++c)
          for (std::size_t y = 0; y < ph; ++y)
            for (std::size_t x = 0; x < pw; ++x)
              row[k++] = src[((t * config.C + c) * config.H + r * ph + y) * config.W + q * pw + x];
      }
  Var tokens = ops::matmul(tape.constant(std::move(flat)), tape.param(params.embed_w));
  return ops::add(tokens, tape.param(params.embed_b));
}

namespace {

Tensor ones_like_shape(const Shape& s) { return Tensor(s, 1.0); }

// Inter-frame prompts from one layer output.
Var spread_prompts(Tape& tape, const TokenSequence& seq, Var w, Var v, const ModelConfig& config,
                   const ModelParams& params, std::size_t boundary) {
  const std::vector<std::size_t> picks = sampled_patches(config.strategy, seq.patches);
  const IfsParams& main = params.ifs.at(boundary);
  switch (config.strategy) {
    case SamplingStrategy::kLastForward:
    case SamplingStrategy::kMiddle:
      return ifs_forward(tape, sample_frame_token(seq, picks[0]), w, v, main);
    case SamplingStrategy::kBidirection: {
      Var last = sample_frame_token(seq, picks[0]);
      Var first = sample_frame_token(seq, picks[1]);
      std::vector<ops::RowRef> refs;
      for (std::size_t f = 0; f < seq.frames; ++f) refs.push_back({0, f});
      for (std::size_t f = 0; f < seq.frames; ++f) refs.push_back({1, f});
      return ifs_forward(tape, ops::gather_rows({last, first}, refs), w, v, main);
    }
    case SamplingStrategy::kBiIndependent: {
      Var a = ifs_forward(tape, sample_frame_token(seq, picks[0]), w, v, main);
      Var b = ifs_forward(tape, sample_frame_token(seq, picks[1]), w, v, params.ifs_aux.at(boundary));
      return ops::scale(ops::add(a, b), 0.5);
    }
  }
  throw ConfigError("unsupported sampling strategy");
}

}  // namespace

Var forward(Tape& tape, const Tensor& video, const ModelConfig& config, const ModelParams& params,
            const ForwardOptions& options, ForwardTrace* trace) {
  config.validate();
  if (params.layers.size() != config.L) throw ConfigError("model has " + std::to_string(params.layers.size()) + " layers, config says " + std::to_string(config.L));
  const std::size_t T = config.T, N = config.patches(), d = config.d;

  TokenSequence seq = make_sequence(tape.param(params.cls), patch_embed(tape, video, config, params), T, N);
  if (trace) trace->layers.clear();
  std::optional<Var> last_prompts;

  for (std::size_t l = 0; l < config.L; ++l) {
    LayerTrace* lt = nullptr;
    if (trace) {
      trace->layers.emplace_back();
      lt = &trace->layers.back();
    }

    Var w = tape.constant(ones_like_shape({T, d}));
    Var v = tape.constant(ones_like_shape({T, d}));
    TokenSequence input = seq;
    if (options.use_ifg) {
      IfgResult ifg = ifg_forward(tape, gather_frame_tokens(seq), T, params.ifg);
      if (options.use_entropy_gate) w = ifg.w;
      if (options.use_variance_gate) v = ifg.v;
      input = rebuild_sequence(seq, overlay_intra(gather_frame_tokens(seq), ifg.p_s), std::nullopt);
      if (lt) {
        lt->prompts = PromptState{ifg.p_s.value().reshaped({T, N, d}), w.value(), v.value(),
                                  ifg.frame_mean.value(), Tensor()};
      }
    }
    if (lt) lt->positions = input.positions;

    Var out = mamba_block(tape, input.tokens, params.layers[l], lt ? &lt->block : nullptr);
    seq = TokenSequence{out, input.positions, T, N};

    const std::size_t boundary = l + 1;  // boundary after layer l+1 (1-based)
    if (!options.use_ifs || boundary >= config.L) continue;
    if (boundary <= config.n_ifs) {
      Var p_t = spread_prompts(tape, seq, w, v, config, params, boundary - 1);
      seq = insert_inter(seq, p_t);
      last_prompts = p_t;
      if (lt) {
        if (!lt->prompts) lt->prompts = PromptState{Tensor(), w.value(), v.value(), Tensor(), Tensor()};
        lt->prompts->p_t = p_t.value();
      }
    } else if (options.slot_mode == SlotMode::kReuse && last_prompts) {
      seq = insert_inter(seq, *last_prompts);
    }
  }

  Var cls_out = ops::rows(seq.tokens, 0, 1);
  Var feat = ops::rmsnorm(cls_out, tape.param(params.norm_f));
  Var logits = ops::add(ops::matmul(feat, tape.param(params.head_w)), tape.param(params.head_b));
  return ops::reshape(logits, {config.n_classes});
}

}  // namespace ssp

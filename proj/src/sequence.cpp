// SPDX-License-Identifier: Apache-2.0
#include "ssp/sequence.hpp"

#include <string>

#include "ssp/errors.hpp"
#include "ssp/ops.hpp"

namespace ssp {

bool TokenSequence::has_prompt_slots() const {
  for (const auto& p : positions) {
    if (p.kind == PositionTag::Kind::kPrompt) return true;
  }
  return false;
}

std::size_t TokenSequence::frame_position(std::size_t frame, std::size_t patch) const {
  if (frame >= frames || patch >= patches) {
    throw ContractError("frame_position: (" + std::to_string(frame) + ", " + std::to_string(patch) +
                        ") outside a " + std::to_string(frames) + "x" + std::to_string(patches) + " sequence");
  }
  const std::size_t stride = has_prompt_slots() ? patches + 1 : patches;
  return 1 + frame * stride + patch;
}

std::vector<std::size_t> TokenSequence::frame_positions() const {
  std::vector<std::size_t> out;
  out.reserve(frames * patches);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i].kind == PositionTag::Kind::kFrame) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> TokenSequence::prompt_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i].kind == PositionTag::Kind::kPrompt) out.push_back(i);
  }
  return out;
}

std::vector<PositionTag> plain_layout(std::size_t frames, std::size_t patches) {
  std::vector<PositionTag> out;
  out.reserve(1 + frames * patches);
  out.push_back({PositionTag::Kind::kCls, 0, 0});
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t p = 0; p < patches; ++p) out.push_back({PositionTag::Kind::kFrame, f, p});
  return out;
}

std::vector<PositionTag> slotted_layout(std::size_t frames, std::size_t patches) {
  std::vector<PositionTag> out;
  out.reserve(1 + frames * (patches + 1));
  out.push_back({PositionTag::Kind::kCls, 0, 0});
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t p = 0; p < patches; ++p) out.push_back({PositionTag::Kind::kFrame, f, p});
    out.push_back({PositionTag::Kind::kPrompt, f, 0});
  }
  return out;
}

TokenSequence make_sequence(Var cls, Var frame_tokens, std::size_t frames, std::size_t patches) {
  if (cls.shape().size() != 2 || cls.shape()[0] != 1) {
    throw DimensionError("make_sequence: cls token must be [1 x d], got " + to_string(cls.shape()));
  }
  if (frame_tokens.shape().size() != 2 || frame_tokens.shape()[0] != frames * patches) {
    throw DimensionError("make_sequence: expected " + std::to_string(frames * patches) + " frame tokens, got " +
                         to_string(frame_tokens.shape()));
  }
  std::vector<ops::RowRef> refs;
  refs.reserve(1 + frames * patches);
  refs.push_back({0, 0});
  for (std::size_t i = 0; i < frames * patches; ++i) refs.push_back({1, i});
  return {ops::gather_rows({cls, frame_tokens}, refs), plain_layout(frames, patches), frames, patches};
}

Var gather_frame_tokens(const TokenSequence& seq) {
  std::vector<ops::RowRef> refs;
  for (std::size_t pos : seq.frame_positions()) refs.push_back({0, pos});
  return ops::gather_rows({seq.tokens}, refs);
}

TokenSequence rebuild_sequence(const TokenSequence& seq, std::optional<Var> frame_tokens,
                               std::optional<Var> prompts) {
  const std::size_t tn = seq.frames * seq.patches;
  if (frame_tokens && (frame_tokens->shape().size() != 2 || frame_tokens->shape()[0] != tn)) {
    throw DimensionError("rebuild_sequence: frame tokens " + to_string(frame_tokens->shape()) + " do not cover " +
                         std::to_string(tn) + " positions");
  }
  if (prompts && (prompts->shape().size() != 2 || prompts->shape()[0] != seq.frames)) {
    throw ContractError("insert_inter: " + std::to_string(prompts->shape().empty() ? 0 : prompts->shape()[0]) +
                        " prompts for " + std::to_string(seq.frames) + " frames");
  }
  const bool slotted = prompts || seq.has_prompt_slots();
  // Source 0 is the current sequence; 1 and 2 are optional replacements.
  std::vector<Var> sources{seq.tokens};
  std::size_t frame_src = 0, prompt_src = 0;
  if (frame_tokens) {
    frame_src = sources.size();
    sources.push_back(*frame_tokens);
  }
  if (prompts) {
    prompt_src = sources.size();
    sources.push_back(*prompts);
  }

  std::vector<PositionTag> layout = slotted ? slotted_layout(seq.frames, seq.patches) : plain_layout(seq.frames, seq.patches);
  std::vector<ops::RowRef> refs;
  refs.reserve(layout.size());
  const std::vector<std::size_t> old_prompts = seq.prompt_positions();
  for (const PositionTag& tag : layout) {
    switch (tag.kind) {
      case PositionTag::Kind::kCls:
        refs.push_back({0, 0});
        break;
      case PositionTag::Kind::kFrame:
        if (frame_tokens) {
          refs.push_back({frame_src, tag.frame * seq.patches + tag.patch});
        } else {
          refs.push_back({0, seq.frame_position(tag.frame, tag.patch)});
        }
        break;
      case PositionTag::Kind::kPrompt:
        if (prompts) {
          refs.push_back({prompt_src, tag.frame});
        } else {
          refs.push_back({0, old_prompts.at(tag.frame)});
        }
        break;
    }
  }
  return {ops::gather_rows(sources, refs), std::move(layout), seq.frames, seq.patches};
}

TokenSequence remove_prompt_slots(const TokenSequence& seq) {
  std::vector<ops::RowRef> refs;
  refs.push_back({0, 0});
  for (std::size_t pos : seq.frame_positions()) refs.push_back({0, pos});
  return {ops::gather_rows({seq.tokens}, refs), plain_layout(seq.frames, seq.patches), seq.frames, seq.patches};
}

}  // namespace ssp

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "ssp/tape.hpp"

namespace ssp {

struct PositionTag {
  enum class Kind { kCls, kFrame, kPrompt };
  Kind kind = Kind::kCls;
  std::size_t frame = 0;  // frame index for kFrame and kPrompt
  std::size_t patch = 0;  // raster patch index for kFrame

  bool operator==(const PositionTag&) const = default;
};

/// The scan sequence: cls at index 0, then each frame's patch tokens in
/// raster order, optionally followed by that frame's inter-frame prompt slot.
struct TokenSequence {
  Var tokens;  // [S x d]
  std::vector<PositionTag> positions;
  std::size_t frames = 0;
  std::size_t patches = 0;

  std::size_t length() const { return positions.size(); }
  bool has_prompt_slots() const;
  /// Sequence index of (frame, patch).
  std::size_t frame_position(std::size_t frame, std::size_t patch) const;
  /// Sequence indices of all frame tokens, frame-major.
  std::vector<std::size_t> frame_positions() const;
  /// Sequence indices of prompt slots, by frame; empty without slots.
  std::vector<std::size_t> prompt_positions() const;
};

/// Position map for a sequence without prompt slots.
std::vector<PositionTag> plain_layout(std::size_t frames, std::size_t patches);
/// Position map with a prompt slot after each frame.
std::vector<PositionTag> slotted_layout(std::size_t frames, std::size_t patches);

/// [cls; frame tokens]. cls is [1 x d], frame_tokens [(T*N) x d].
TokenSequence make_sequence(Var cls, Var frame_tokens, std::size_t frames, std::size_t patches);

/// Frame tokens as [(T*N) x d], frame-major.
Var gather_frame_tokens(const TokenSequence& seq);

/// Same layout with frame rows replaced by `frame_tokens` [(T*N) x d] and,
/// when given, prompt slots filled from `prompts` [T x d] (creating the
/// slots if the sequence has none). Without `prompts`, existing slot rows
/// are carried over.
TokenSequence rebuild_sequence(const TokenSequence& seq, std::optional<Var> frame_tokens, std::optional<Var> prompts);

/// Drops prompt slots, restoring the plain layout.
TokenSequence remove_prompt_slots(const TokenSequence& seq);

}  // namespace ssp

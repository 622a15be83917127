// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "ssp/model.hpp"

namespace ssp {

/// Writes manifest.txt ("name relpath shape" per line), one SSPTENS1 file
/// per tensor under tensors/, and model.json.
void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& config, ModelParams& params);

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

/// Throws MissingArtifactError if the manifest is absent, FormatError on a
/// malformed manifest or a tensor whose shape disagrees with it.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// SHA-256 of every named tensor.
std::map<std::string, std::string> tensor_hashes(ModelParams& params);

}  // namespace ssp

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "ssp/data.hpp"
#include "ssp/model.hpp"

namespace ssp {

struct OptimConfig {
  double lr = 3e-3;
  double min_lr = 1e-5;
  double weight_decay = 0.05;
  std::size_t epochs = 50;
  std::size_t warmup_epochs = 5;
  std::size_t batch_size = 8;
  double grad_clip = 1.0;
};

/// One experiment. Every field has a default, so an empty document yields
/// the reference toy run.
struct RunConfig {
  ModelConfig model;
  std::size_t samples_per_class = 100;
  double noise_sigma = 0.05;
  std::uint64_t data_seed = 0;
  FreezePolicy policy = FreezePolicy::kSspPeft;
  OptimConfig optim;
  double beta_init = 0.1;
  ForwardOptions options;
  std::uint64_t seed = 0;
  std::string out = "runs/default";
  std::string dataset = "data/synth";
  int threads = 0;  // 0 = OpenMP default

  SynthSpec synth_spec() const;
  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

/// Strict parse: unknown keys and mistyped values throw ConfigError naming
/// the key.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& config);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& json_text);

}  // namespace ssp

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssp/tensor.hpp"

namespace ssp {

/// Synthetic moving-square video classes. Frames are single channel unless
/// C > 1, in which case every channel carries the same pattern.
enum class MotionClass : std::size_t { kRight = 0, kLeft, kDown, kGrow, kShrink, kBlink };

inline constexpr std::size_t kMotionClassCount = 6;
inline constexpr double kValFraction = 0.2;

struct SynthSpec {
  std::size_t n_classes = 6;
  std::size_t samples_per_class = 100;
  std::size_t T = 8;
  std::size_t H = 16;
  std::size_t W = 16;
  std::size_t C = 1;
  std::uint64_t seed = 0;
  double noise_sigma = 0.05;

  /// Throws ConfigError on unusable values.
  void validate() const;
};

/// [T x C x H x W] video for one (class, index). Pure in its arguments.
/// Throws ContractError for a class outside [0, n_classes).
Tensor generate_sample(const SynthSpec& spec, std::size_t class_id, std::size_t index);

/// Frames of `video` in a permuted temporal order.
Tensor shuffle_frames(const Tensor& video, const std::vector<std::size_t>& order);

enum class Split { kTrain, kVal };

std::string to_string(Split split);

struct DatasetEntry {
  std::string path;  // relative to the dataset directory
  std::size_t label = 0;
  Split split = Split::kTrain;
  std::string sha256;
};

struct DatasetIndex {
  std::vector<DatasetEntry> entries;
  std::uint64_t split_seed = 0;
};

/// Stratified split: per class, a seeded shuffle sends round(0.2 * count)
/// samples to validation. Returns one Split per (class, index), class-major.
std::vector<Split> stratified_split(std::size_t n_classes, std::size_t per_class, std::uint64_t seed);

/// Writes samples/*.sspt, index.csv and spec.json under `dir`.
DatasetIndex write_dataset(const SynthSpec& spec, const std::filesystem::path& dir);

struct Dataset {
  SynthSpec spec;
  DatasetIndex index;
  std::vector<Tensor> videos;
  std::vector<std::size_t> labels;
  std::vector<Split> splits;

  std::vector<std::size_t> indices(Split split) const;
};

/// Loads and verifies every sample against its recorded SHA-256.
/// Throws MissingArtifactError if the index is absent and FormatError on a
/// corrupt or tampered sample.
Dataset read_dataset(const std::filesystem::path& dir);

std::string spec_to_json(const SynthSpec& spec);
SynthSpec spec_from_json(const std::string& text);

}  // namespace ssp

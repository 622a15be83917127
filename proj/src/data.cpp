// SPDX-License-Identifier: Apache-2.0
#include "ssp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "ssp/errors.hpp"
#include "ssp/hash.hpp"
#include "ssp/serialize.hpp"

namespace ssp {

namespace fs = std::filesystem;

void SynthSpec::validate() const {
  if (n_classes == 0 || n_classes > kMotionClassCount) {
    throw ConfigError("n_classes must be in [1, " + std::to_string(kMotionClassCount) + "] for the synthetic task");
  }
  if (samples_per_class == 0) throw ConfigError("samples_per_class must be positive");
  if (T == 0 || C == 0 || H < 4 || W < 4) throw ConfigError("synthetic videos need T, C >= 1 and H, W >= 4");
  if (!(noise_sigma >= 0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be finite and >= 0");
}

namespace {

std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

std::size_t pick(std::mt19937_64& rng, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(0, hi)(rng);
}

struct Box {
  std::size_t top, left, height, width;
};

void paint(Tensor& video, const SynthSpec& spec, std::size_t t, const Box& b) {
  for (std::size_t c = 0; c < spec.C; ++c)
    for (std::size_t y = b.top; y < std::min(spec.H, b.top + b.height); ++y)
      for (std::size_t x = b.left; x < std::min(spec.W, b.left + b.width); ++x)
        video[((t * spec.C + c) * spec.H + y) * spec.W + x] = 1.0;
}

}  // namespace

Tensor generate_sample(const SynthSpec& spec, std::size_t class_id, std::size_t index) {
  spec.validate();
  if (class_id >= spec.n_classes) {
    throw ContractError("generate_sample: class " + std::to_string(class_id) + " outside [0, " +
                        std::to_string(spec.n_classes) + ")");
  }
  const std::size_t side_h = spec.H / 4, side_w = spec.W / 4;
  const std::size_t steps = spec.T - 1;
  Tensor video({spec.T, spec.C, spec.H, spec.W});

  // Geometry depends only on the sample index so mirrored classes share it.
  std::mt19937_64 geo = keyed_rng(spec.seed, index, 0, 1);
  const std::size_t x_slack = spec.W > side_w + steps ? spec.W - side_w - steps : 0;
  const std::size_t y_slack = spec.H > side_h + steps ? spec.H - side_h - steps : 0;
  const std::size_t x0 = pick(geo, x_slack);
  const std::size_t y0 = pick(geo, y_slack);
  const std::size_t top = pick(geo, spec.H - side_h);
  const std::size_t left = pick(geo, spec.W - side_w);
  const std::size_t max_h = std::min(spec.H, 2 * side_h), max_w = std::min(spec.W, 2 * side_w);
  const std::size_t big_top = pick(geo, spec.H - max_h);
  const std::size_t big_left = pick(geo, spec.W - max_w);

  for (std::size_t t = 0; t < spec.T; ++t) {
    const auto cls = static_cast<MotionClass>(class_id);
    switch (cls) {
      case MotionClass::kRight:
      case MotionClass::kLeft: {
        std::size_t x = std::min(x0 + t, spec.W - side_w);
        if (cls == MotionClass::kLeft) x = spec.W - side_w - x;
        paint(video, spec, t, {top, x, side_h, side_w});
        break;
      }
      case MotionClass::kDown: {
        const std::size_t y = std::min(y0 + t, spec.H - side_h);
        paint(video, spec, t, {y, left, side_h, side_w});
        break;
      }
      case MotionClass::kGrow:
      case MotionClass::kShrink: {
        const std::size_t k = cls == MotionClass::kGrow ? t : steps - t;
        const std::size_t h = steps ? 1 + k * (max_h - 1) / steps : max_h;
        const std::size_t w = steps ? 1 + k * (max_w - 1) / steps : max_w;
        paint(video, spec, t, {big_top + (max_h - h) / 2, big_left + (max_w - w) / 2, h, w});
        break;
      }
      case MotionClass::kBlink:
        if (t % 2 == 0) paint(video, spec, t, {top, left, side_h, side_w});
        break;
    }
  }

  if (spec.noise_sigma > 0) {
    std::mt19937_64 noise = keyed_rng(spec.seed, index, class_id, 2);
    std::normal_distribution<double> dist(0.0, spec.noise_sigma);
    for (double& v : video.data()) v = std::clamp(v + dist(noise), 0.0, 1.0);
  }
  return video;
}

Tensor shuffle_frames(const Tensor& video, const std::vector<std::size_t>& order) {
  const std::size_t t = video.dim(0);
  if (order.size() != t) throw DimensionError("shuffle_frames: order has " + std::to_string(order.size()) + " entries for " + std::to_string(t) + " frames");
  const std::size_t frame = video.numel() / t;
  Tensor out(video.shape());
  for (std::size_t i = 0; i < t; ++i) {
    if (order[i] >= t) throw ContractError("shuffle_frames: frame index out of range");
    std::copy_n(video.data().begin() + static_cast<std::ptrdiff_t>(order[i] * frame), frame,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * frame));
  }
  return out;
}

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "val"; }

std::vector<Split> stratified_split(std::size_t n_classes, std::size_t per_class, std::uint64_t seed) {
  const auto n_val = static_cast<std::size_t>(std::llround(kValFraction * static_cast<double>(per_class)));
  std::vector<Split> out(n_classes * per_class, Split::kTrain);
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<std::size_t> order(per_class);
    for (std::size_t i = 0; i < per_class; ++i) order[i] = i;
    std::mt19937_64 rng = keyed_rng(seed, c, 0, 3);
    // Fisher-Yates with explicit draws keeps the split identical across
    // standard library implementations of std::shuffle.
    for (std::size_t i = per_class; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    for (std::size_t i = 0; i < n_val; ++i) out[c * per_class + order[i]] = Split::kVal;
  }
  return out;
}

std::string spec_to_json(const SynthSpec& spec) {
  nlohmann::ordered_json j;
  j["n_classes"] = spec.n_classes;
  j["samples_per_class"] = spec.samples_per_class;
  j["T"] = spec.T;
  j["H"] = spec.H;
  j["W"] = spec.W;
  j["C"] = spec.C;
  j["seed"] = spec.seed;
  j["noise_sigma"] = spec.noise_sigma;
  return j.dump(2) + "\n";
}

SynthSpec spec_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    SynthSpec s;
    s.n_classes = j.at("n_classes").get<std::size_t>();
    s.samples_per_class = j.at("samples_per_class").get<std::size_t>();
    s.T = j.at("T").get<std::size_t>();
    s.H = j.at("H").get<std::size_t>();
    s.W = j.at("W").get<std::size_t>();
    s.C = j.at("C").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.noise_sigma = j.at("noise_sigma").get<double>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset spec: ") + e.what());
  }
}

DatasetIndex write_dataset(const SynthSpec& spec, const fs::path& dir) {
  spec.validate();
  fs::create_directories(dir / "samples");
  DatasetIndex index;
  index.split_seed = spec.seed;
  const std::vector<Split> splits = stratified_split(spec.n_classes, spec.samples_per_class, spec.seed);
  std::ostringstream csv;
  csv << "path,label,split,sha256\n";
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "samples/c%zu_%04zu.sspt", c, i);
      const std::string bytes = encode_tensor(generate_sample(spec, c, i));
      write_file(dir / name, bytes);
      DatasetEntry e{name, c, splits[c * spec.samples_per_class + i], sha256_hex(bytes)};
      csv << e.path << ',' << e.label << ',' << to_string(e.split) << ',' << e.sha256 << '\n';
      index.entries.push_back(std::move(e));
    }
  }
  write_file(dir / "index.csv", csv.str());
  write_file(dir / "spec.json", spec_to_json(spec));
  return index;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == split) out.push_back(i);
  return out;
}

Dataset read_dataset(const fs::path& dir) {
  Dataset ds;
  ds.spec = spec_from_json(read_file(dir / "spec.json"));
  ds.index.split_seed = ds.spec.seed;
  std::istringstream csv(read_file(dir / "index.csv"));
  std::string line;
  std::getline(csv, line);
  if (line != "path,label,split,sha256") throw FormatError((dir / "index.csv").string() + ": unexpected header");
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 4 || (f[2] != "train" && f[2] != "val")) {
      throw FormatError((dir / "index.csv").string() + ": malformed row '" + line + "'");
    }
    DatasetEntry e{f[0], static_cast<std::size_t>(std::stoul(f[1])), f[2] == "train" ? Split::kTrain : Split::kVal,
                   f[3]};
    const fs::path file = dir / e.path;
    const std::string bytes = read_file(file);
    if (sha256_hex(bytes) != e.sha256) throw FormatError(file.string() + ": checksum mismatch");
    ds.videos.push_back(decode_tensor(bytes, file.string()));
    ds.labels.push_back(e.label);
    ds.splits.push_back(e.split);
    ds.index.entries.push_back(std::move(e));
  }
  return ds;
}

}  // namespace ssp

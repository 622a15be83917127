// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "ssp/model.hpp"
#include "ssp/tensor.hpp"

namespace ssp::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  return normal_tensor(std::move(shape), stddev, rng);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Two frames of a 4x4 image cut into 2x2 patches (N = 4).
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.T = 2;
  c.H = 4;
  c.W = 4;
  c.patch_h = 2;
  c.patch_w = 2;
  c.d = 8;
  c.D = 4;
  c.L = 2;
  c.d_s = 4;
  c.d_t = 4;
  c.n_ifs = 1;
  c.n_classes = 3;
  return c;
}

/// Gives the zero-initialized prompt projections random values so every
/// prompt path carries signal.
inline void activate_prompts(ModelParams& p, std::uint64_t seed, double stddev = 0.3) {
  std::mt19937_64 rng(seed);
  p.ifg.up1 = normal_tensor(p.ifg.up1.shape(), stddev, rng);
  p.ifg.up2 = normal_tensor(p.ifg.up2.shape(), stddev, rng);
  for (IfsParams& f : p.ifs) f.up3 = normal_tensor(f.up3.shape(), stddev, rng);
  for (IfsParams& f : p.ifs_aux) f.up3 = normal_tensor(f.up3.shape(), stddev, rng);
}

inline Tensor random_video(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor v({c.T, c.C, c.H, c.W});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& x : v.data()) x = u(rng);
  return v;
}

}  // namespace ssp::test

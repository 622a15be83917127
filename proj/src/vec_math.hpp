// SPDX-License-Identifier: Apache-2.0
// Declares the vector variants of exp/expm1/log1p shipped in glibc's libmvec so
// that `#pragma omp simd` loops calling them vectorize. Without libmvec the
// loops fall back to the scalar calls.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#if defined(SSP_HAVE_LIBMVEC)
extern "C" {
__attribute__((simd("notinbranch"))) double exp(double) noexcept;
__attribute__((simd("notinbranch"))) double expm1(double) noexcept;
__attribute__((simd("notinbranch"))) double log1p(double) noexcept;
}
#endif

namespace ssp::vecmath {

inline constexpr std::size_t kLanes = 8;

// y[i] = f(x[i]) in zero-padded blocks of kLanes, so every element takes the
// same code path whatever its position (no scalar remainder loop).
template <class F>
void blocked_map(const double* x, double* y, std::size_t n, F f) {
  const std::size_t full = n - n % kLanes;
  for (std::size_t base = 0; base < full; base += kLanes) {
#pragma omp simd
    for (std::size_t i = 0; i < kLanes; ++i) y[base + i] = f(x[base + i]);
  }
  if (full == n) return;
  alignas(64) double pad[kLanes] = {};
  std::copy(x + full, x + n, pad);
#pragma omp simd
  for (std::size_t i = 0; i < kLanes; ++i) pad[i] = f(pad[i]);
  std::copy(pad, pad + (n - full), y + full);
}

}  // namespace ssp::vecmath

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ssp/model.hpp"
#include "ssp/tensor.hpp"

namespace ssp {

/// Trainable tensors in named_tensors() order.
std::vector<Tensor*> trainable_tensors(ModelParams& params);

struct BatchResult {
  double loss = 0.0;  // mean over the batch
  std::size_t correct = 0;
  std::vector<std::vector<double>> grads;  // mean gradient per trainable tensor
};

struct BatchInput {
  const ModelConfig& config;
  const ModelParams& params;
  const ForwardOptions& options;
  std::span<const Tensor* const> videos;
  std::span<const std::size_t> labels;
};

/// Reference: one sample after another on the calling thread.
BatchResult batch_gradient_serial(const BatchInput& in, const std::vector<Tensor*>& trainable);

/// Samples spread over OpenMP threads, each on its own tape; per-sample
/// results are merged in sample order, so the result is bitwise identical
/// to batch_gradient_serial for any thread count.
BatchResult batch_gradient(const BatchInput& in, const std::vector<Tensor*>& trainable, int threads);

struct EvalResult {
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;
  double top1() const { return count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0; }
};

/// Forward-only loss and accuracy.
EvalResult evaluate_batch(const BatchInput& in, int threads);

/// Thread count to use: 1 when SSP_DETERMINISTIC=1, else `requested`, or
/// the OpenMP default when requested <= 0.
int resolve_threads(int requested);

}  // namespace ssp

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "ssp/config.hpp"
#include "ssp/data.hpp"
#include "ssp/model.hpp"

namespace ssp {

struct Moments {
  std::vector<double> m;
  std::vector<double> v;
};

/// AdamW state. Moment buffers are created on a tensor's first update and
/// only for trainable tensors.
struct OptimState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t step = 0;
  std::unordered_map<const Tensor*, Moments> moments;
};

struct GradEntry {
  Tensor* param;
  std::vector<double> grad;
};

/// One decoupled-weight-decay Adam update over `grads`. Throws
/// ContractError if any entry names a frozen tensor or has the wrong size.
void optimizer_step(const std::vector<GradEntry>& grads, OptimState& state, double lr);

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_global_norm(std::vector<GradEntry>& grads, double max_norm);

struct Schedule {
  double warmup_epochs = 5;
  double total_epochs = 50;
  double peak_lr = 3e-3;
  double min_lr = 0.0;
};

/// Learning rate at training progress t in [0, 1]: linear warmup from 0,
/// then cosine decay to min_lr.
double lr_at(const Schedule& schedule, double t);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_top1 = 0.0;
  double val_loss = 0.0;
  double val_top1 = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  double best_val_top1 = 0.0;
  std::size_t best_epoch = 0;
  bool frozen_unchanged = true;
  std::vector<std::string> changed_frozen;
  std::size_t trainable_tensors = 0;
  std::size_t updated_tensors = 0;
  ParamCounts counts;
  std::vector<double> step_losses;  // batch loss per optimizer step
};

struct TrainHooks {
  bool write_files = true;  // config.json, metrics.csv, checkpoints, hash report
  bool verbose = false;
};

/// Trains on the dataset's train split and validates every epoch. Writes the
/// run directory unless hooks.write_files is false. Throws NumericError
/// after dumping state to {out}/abort/ if a batch loss is not finite.
TrainResult train(const RunConfig& config, const Dataset& data, const TrainHooks& hooks = {});

/// Same, but starting from and updating caller-owned parameters.
TrainResult train_params(const RunConfig& config, ModelParams& params, const Dataset& data,
                         const TrainHooks& hooks = {});

}  // namespace ssp

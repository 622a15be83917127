// SPDX-License-Identifier: Apache-2.0
#include "ssp/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "ssp/checkpoint.hpp"
#include "ssp/errors.hpp"
#include "ssp/parallel.hpp"
#include "ssp/serialize.hpp"

namespace ssp {

namespace fs = std::filesystem;

void optimizer_step(const std::vector<GradEntry>& grads, OptimState& state, double lr) {
  for (const GradEntry& g : grads) {
    if (!g.param->requires_grad()) throw ContractError("optimizer_step: gradient supplied for a frozen tensor");
    if (g.grad.size() != g.param->numel()) throw ContractError("optimizer_step: gradient size mismatch");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (const GradEntry& g : grads) {
    Moments& mom = state.moments[g.param];
    if (mom.m.empty()) {
      mom.m.assign(g.grad.size(), 0.0);
      mom.v.assign(g.grad.size(), 0.0);
    }
    auto p = g.param->data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      mom.m[i] = state.beta1 * mom.m[i] + (1.0 - state.beta1) * g.grad[i];
      mom.v[i] = state.beta2 * mom.v[i] + (1.0 - state.beta2) * g.grad[i] * g.grad[i];
      const double m_hat = mom.m[i] / c1;
      const double v_hat = mom.v[i] / c2;
      p[i] = p[i] - lr * (m_hat / (std::sqrt(v_hat) + state.eps)) - lr * state.weight_decay * p[i];
    }
  }
}

double clip_global_norm(std::vector<GradEntry>& grads, double max_norm) {
  double sq = 0.0;
  for (const GradEntry& g : grads)
    for (double v : g.grad) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const double s = max_norm / norm;
    for (GradEntry& g : grads)
      for (double& v : g.grad) v *= s;
  }
  return norm;
}

double lr_at(const Schedule& schedule, double t) {
  t = std::clamp(t, 0.0, 1.0);
  const double wf = schedule.total_epochs > 0 ? schedule.warmup_epochs / schedule.total_epochs : 0.0;
  if (wf > 0 && t < wf) return schedule.peak_lr * t / wf;
  const double u = wf < 1 ? (t - wf) / (1 - wf) : 1.0;
  return schedule.min_lr + (schedule.peak_lr - schedule.min_lr) * (1 + std::cos(std::numbers::pi * u)) / 2;
}

namespace {

std::vector<std::size_t> epoch_order(std::vector<std::size_t> idx, std::uint64_t seed, std::size_t epoch) {
  std::mt19937_64 rng(seed * 1000003ULL + epoch);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  return idx;
}

EvalResult evaluate_split(const RunConfig& config, const ModelParams& params, const Dataset& data, Split split) {
  const std::vector<std::size_t> idx = data.indices(split);
  std::vector<const Tensor*> videos;
  std::vector<std::size_t> labels;
  for (std::size_t i : idx) {
    videos.push_back(&data.videos[i]);
    labels.push_back(data.labels[i]);
  }
  BatchInput in{config.model, params, config.options, videos, labels};
  return evaluate_batch(in, config.threads);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainResult train(const RunConfig& config, const Dataset& data, const TrainHooks& hooks) {
  config.validate();
  ModelParams params = init_model(config.model, config.seed, config.beta_init);
  return train_params(config, params, data, hooks);
}

TrainResult train_params(const RunConfig& config, ModelParams& params, const Dataset& data, const TrainHooks& hooks) {
  config.validate();
  const fs::path out = config.out;
  apply_freeze(params, config.policy, config.options);
  const std::vector<Tensor*> trainable = trainable_tensors(params);
  const std::vector<NamedTensor> named = named_tensors(params);

  TrainResult result;
  result.counts = count_params(params);
  result.trainable_tensors = trainable.size();
  const auto hashes_before = tensor_hashes(params);

  if (hooks.write_files) {
    fs::create_directories(out / "checkpoints");
    fs::create_directories(out / "exports");
    write_file(out / "config.json", run_config_to_json(config));
    save_checkpoint(out / "checkpoints" / "initial", config.model, params);
  }

  const std::vector<std::size_t> train_idx = data.indices(Split::kTrain);
  if (train_idx.empty()) throw ContractError("train: dataset has no training samples");
  const std::size_t bs = config.optim.batch_size;
  const std::size_t steps_per_epoch = (train_idx.size() + bs - 1) / bs;
  const std::size_t total_steps = steps_per_epoch * config.optim.epochs;
  const Schedule schedule{static_cast<double>(config.optim.warmup_epochs), static_cast<double>(config.optim.epochs),
                          config.optim.lr, std::min(config.optim.min_lr, config.optim.lr)};
  OptimState state;
  state.weight_decay = config.optim.weight_decay;

  std::ostringstream metrics;
  metrics << "epoch,split,loss,top1,lr\n";
  std::size_t step = 0;
  double best = -1.0;

  for (std::size_t epoch = 0; epoch < config.optim.epochs; ++epoch) {
    const std::vector<std::size_t> order = epoch_order(train_idx, config.seed, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    double lr = 0.0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      std::vector<const Tensor*> videos;
      std::vector<std::size_t> labels;
      for (std::size_t k = b * bs; k < std::min(order.size(), (b + 1) * bs); ++k) {
        videos.push_back(&data.videos[order[k]]);
        labels.push_back(data.labels[order[k]]);
      }
      BatchInput in{config.model, params, config.options, videos, labels};
      auto dump_and_abort = [&](const std::string& reason, double loss) {
        if (hooks.write_files) {
          save_checkpoint(out / "abort" / "params", config.model, params);
          write_file(out / "abort" / "state.txt", "epoch " + std::to_string(epoch) + "\nstep " + std::to_string(step) +
                                                       "\nloss " + fmt(loss) + "\nreason " + reason + "\n");
        }
        throw NumericError(reason + " at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      };
      BatchResult br;
      try {
        br = batch_gradient(in, trainable, config.threads);
      } catch (const NumericError& e) {
        dump_and_abort(e.what(), std::numeric_limits<double>::quiet_NaN());
      }
      if (!std::isfinite(br.loss)) dump_and_abort("non-finite loss", br.loss);
      loss_sum += br.loss * static_cast<double>(videos.size());
      correct += br.correct;
      result.step_losses.push_back(br.loss);

      std::vector<GradEntry> grads;
      grads.reserve(trainable.size());
      for (std::size_t k = 0; k < trainable.size(); ++k) grads.push_back({trainable[k], std::move(br.grads[k])});
      clip_global_norm(grads, config.optim.grad_clip);
      lr = lr_at(schedule, static_cast<double>(step + 1) / static_cast<double>(total_steps));
      optimizer_step(grads, state, lr);
      ++step;
    }

    EpochMetrics em;
    em.epoch = epoch + 1;
    em.train_loss = loss_sum / static_cast<double>(train_idx.size());
    em.train_top1 = static_cast<double>(correct) / static_cast<double>(train_idx.size());
    em.lr = lr;
    if (!data.indices(Split::kVal).empty()) {
      const EvalResult ev = evaluate_split(config, params, data, Split::kVal);
      em.val_loss = ev.loss;
      em.val_top1 = ev.top1();
    }
    result.history.push_back(em);
    metrics << em.epoch << ",train," << fmt(em.train_loss) << ',' << fmt(em.train_top1) << ',' << fmt(lr) << '\n';
    metrics << em.epoch << ",val," << fmt(em.val_loss) << ',' << fmt(em.val_top1) << ',' << fmt(lr) << '\n';
    if (hooks.verbose) {
      std::printf("epoch %3zu  train_loss %.4f  train_top1 %.3f  val_loss %.4f  val_top1 %.3f  lr %.2e\n", em.epoch,
                  em.train_loss, em.train_top1, em.val_loss, em.val_top1, lr);
      std::fflush(stdout);
    }
    if (em.val_top1 > best) {
      best = em.val_top1;
      result.best_val_top1 = em.val_top1;
      result.best_epoch = em.epoch;
      if (hooks.write_files) save_checkpoint(out / "checkpoints" / "best", config.model, params);
    }
    if (hooks.write_files) write_file(out / "metrics.csv", metrics.str());
  }

  const auto hashes_after = tensor_hashes(params);
  std::ostringstream report;
  for (const NamedTensor& nt : named) {
    const bool changed = hashes_before.at(nt.name) != hashes_after.at(nt.name);
    if (changed) ++result.updated_tensors;
    if (nt.tensor->requires_grad()) continue;
    if (changed) {
      result.frozen_unchanged = false;
      result.changed_frozen.push_back(nt.name);
    }
    report << nt.name << ' ' << hashes_before.at(nt.name) << ' ' << hashes_after.at(nt.name) << ' '
           << (changed ? "changed" : "unchanged") << '\n';
  }
  report << "frozen tensors: " << (result.frozen_unchanged ? "unchanged" : "CHANGED") << '\n';
  if (hooks.write_files) {
    write_file(out / "frozen_hashes.txt", report.str());
    save_checkpoint(out / "checkpoints" / "final", config.model, params);
  }
  return result;
}

}  // namespace ssp
